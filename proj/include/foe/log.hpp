#pragma once

#include <cstdio>
#include <cstdlib>
#include <cstring>

#include "foe/common.hpp"

namespace foe::log {

enum class Level { Error = 0, Info = 1, Debug = 2 };

// Level comes from FOE_LOG={error|info|debug}; default info.
inline Level level() {
  static Level lvl = [] {
    const char* env = std::getenv("FOE_LOG");
    if (env == nullptr) return Level::Info;
    if (std::strcmp(env, "error") == 0) return Level::Error;
    if (std::strcmp(env, "debug") == 0) return Level::Debug;
    return Level::Info;
  }();
  return lvl;
}

template <class... Args>
void error(const Args&... args) {
  std::fprintf(stderr, "[foe:error] %s\n", str(args...).c_str());
}

template <class... Args>
void info(const Args&... args) {
  if (level() >= Level::Info)
    std::fprintf(stderr, "[foe] %s\n", str(args...).c_str());
}

template <class... Args>
void debug(const Args&... args) {
  if (level() >= Level::Debug)
    std::fprintf(stderr, "[foe:debug] %s\n", str(args...).c_str());
}

}  // namespace foe::log
