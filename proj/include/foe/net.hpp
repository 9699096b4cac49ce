#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "foe/ops.hpp"
#include "foe/rng.hpp"
#include "foe/tape.hpp"

namespace foe::net {

// Global convolution with weights stored in the Fourier domain over the
// double-size padded grid. x is [Cin, H, W]; w is complex
// [Cout, Cin, 2H, 2W]; output [Cout, H, W] with per-channel bias. The
// equivalent spatial kernel of w[co][ci] is Re(ifft2(w)), with zero
// displacement at the padded-grid center (H, W).
Var fourier_conv2d(Var x, Var w, Var bias);

// Eq.-style multiscale variant: the padded spectrum is computed once and
// cropped per level; crop_factors must be strictly increasing and divide the
// padded extents. Returns one band-limited map list entry per level, of
// extent [Cout, H/f, W/f].
std::vector<Var> multiscale_fourier_conv(Var x, const std::vector<Var>& w,
                                         const std::vector<Var>& bias,
                                         const std::vector<int64_t>& crop_factors);

// y = m * body(c / m), m = median(c)/scale_factor with mean and unit
// fallbacks for non-positive medians.
Var input_scaled_forward(Tape& t, const std::function<Var(Var)>& body, Var c,
                         double scale_factor);

enum class LayerKind {
  InputScaling,
  FourierConv2D,
  MultiscaleFourierConv2D,
  LeakyReLU,
  ReLU,
  Norm,
  Conv2D,
  Conv3D,
  Reshape2D3D,
  MaxPool2D,
  Upsample2D,
  ConcatSkip,
  InputRescaling,
};

const char* layer_kind_name(LayerKind k);
LayerKind layer_kind_from_name(const std::string& name);

struct Layer {
  LayerKind kind;
  int64_t out_channels = 0;              // conv / fourier layers
  std::vector<int64_t> kernel;           // [kh, kw] or [kd, kh, kw]
  double slope = -0.01;                  // LeakyReLU
  double scale_factor = 0.01;            // InputScaling / InputRescaling
  int64_t depth = 0;                     // Reshape2D3D target D
  int64_t levels = 0;                    // multiscale level count
  std::string save_as;                   // tag this layer's output
  std::string concat_with;               // consume a tagged output
};

struct NetworkSpec {
  std::string name;
  Shape input_shape;  // [C, H, W]
  std::vector<Layer> layers;

  // Shape-chains the layer list; throws naming the offending layer.
  // Returns the output shape.
  Shape validate() const;

  std::string to_json() const;
  static NetworkSpec from_json(const std::string& text);
};

// A built network: spec plus named parameter tensors. Parameters are bound
// onto a tape per forward pass; immutable otherwise.
class Network {
 public:
  struct Param {
    std::string name;
    Tensor value;
  };

  static Network build(const NetworkSpec& spec, uint64_t seed);

  const NetworkSpec& spec() const { return spec_; }
  const std::vector<Param>& params() const { return params_; }
  std::vector<Param>& params() { return params_; }

  int64_t param_count() const;          // real scalars (complex counts twice)
  int64_t kernel_param_count() const;   // weights only, no bias/affine
  int64_t fourier_kernel_param_count() const;

  struct Bound {
    std::vector<Var> vars;  // one per param, in params() order
  };
  Bound bind(Tape& t, bool requires_grad) const;
  Var forward(Tape& t, const Bound& b, Var input) const;

 private:
  NetworkSpec spec_;
  std::vector<Param> params_;
  std::vector<std::vector<size_t>> layer_params_;  // param slots per layer
};

namespace presets {

// Full-size presets mirroring the published layer tables (256 x 256 input).
NetworkSpec fouriernet2d(int64_t h = 256, int64_t w = 256,
                         int64_t fourier_ch = 8);
NetworkSpec fouriernet3d(int64_t h = 256, int64_t w = 256, int64_t d = 12,
                         int64_t fourier_ch = 60);
NetworkSpec fourierunet3d(int64_t h = 256, int64_t w = 256, int64_t d = 12,
                          int64_t fourier_ch = 60, int64_t levels = 4);
NetworkSpec unet2d(int64_t h = 256, int64_t w = 256, int64_t ch1 = 12,
                   int64_t ch = 24, int64_t scales = 8);
NetworkSpec unet3d(int64_t h = 256, int64_t w = 256, int64_t d = 12,
                   int64_t ch1 = 30, int64_t ch = 60, int64_t scales = 4);

// Desk-scale variants: same topology, reduced channels and extents.
NetworkSpec fouriernet2d_mini(int64_t h, int64_t w, int64_t fourier_ch = 1);
NetworkSpec fouriernet3d_mini(int64_t h, int64_t w, int64_t d);
NetworkSpec fourierunet3d_mini(int64_t h, int64_t w, int64_t d);
NetworkSpec unet2d_mini(int64_t h, int64_t w, int64_t ch1 = 2, int64_t ch = 3);
NetworkSpec unet3d_mini(int64_t h, int64_t w, int64_t d);

// Lookup by name: the five table presets plus their -mini forms.
NetworkSpec by_name(const std::string& name, int64_t h, int64_t w, int64_t d);

}  // namespace presets

// Checkpoint directory: manifest.json plus one FOT1 file per parameter and
// optionally the phase mask.
void save_checkpoint(const std::string& dir, const Network& net,
                     const Tensor* phi = nullptr);
Network load_checkpoint(const std::string& dir, Tensor* phi = nullptr);

}  // namespace foe::net
