#pragma once

// Feed-forward regression networks: hidden layers share one activation, the
// output layer is affine.
//
// Parameter layout (flat theta, layer by layer):
//   beta^(0) [d1], w^(0) [d1 x d0 row-major], beta^(1) [d2], w^(1) [d2 x d1], ...
// so theta has sum_i d_{i+1} (d_i + 1) entries.
//
// Binary file layout (all integers and floats little-endian):
//   char[4]  magic "MFNN"
//   u32      format version (1)
//   u32      activation id (0 relu, 1 sigmoid, 2 tanh, 3 sine)
//   u32      number of layer dims L
//   u32[L]   layer dims d0 .. d_{L-1}
//   u64      theta length P
//   f64[P]   theta

#include "mfnn/autodiff.hpp"

#include <cstdint>
#include <iosfwd>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mfnn::nn {

enum class Activation : std::uint32_t { relu = 0, sigmoid = 1, tanh = 2, sine = 3 };

std::string_view to_string(Activation a);
Activation activation_from_string(std::string_view name);

struct Architecture {
    std::vector<std::size_t> layer_dims;  // d0, ..., d_{l+1}
    Activation hidden_activation = Activation::tanh;

    /// d0 -> hidden... -> dout
    static Architecture mlp(std::size_t input_dim, std::span<const std::size_t> hidden, std::size_t output_dim,
                            Activation act);

    void validate() const;
    std::size_t input_dim() const { return layer_dims.front(); }
    std::size_t output_dim() const { return layer_dims.back(); }
    std::size_t n_layers() const { return layer_dims.size() - 1; }
    std::size_t n_params() const;

    bool operator==(const Architecture&) const = default;
};

struct NetParams {
    Architecture arch;
    std::vector<double> theta;

    void validate() const;
    bool operator==(const NetParams&) const = default;
};

enum class InitScheme { uniform_scaled, zeros };

/// uniform_scaled: w ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases 0.
NetParams init(const Architecture& arch, std::uint64_t seed, InitScheme scheme);

/// Pure numeric evaluation.
std::vector<double> forward(const NetParams& params, std::span<const double> input);

/// Generic evaluation over Vars. With recorded theta the whole pass lands on the
/// tape; values match the numeric overload bit for bit.
std::vector<ad::Var> forward(const Architecture& arch, std::span<const ad::Var> theta,
                             std::span<const ad::Var> input);

/// Per-coordinate box [lo, hi]; infinite bounds allowed.
struct Box {
    std::vector<double> lo;
    std::vector<double> hi;

    static Box unbounded(std::size_t dim);
    void validate() const;
};

std::vector<double> clamp_output(std::span<const double> v, const Box& box);
/// Gradient passes with slope 1 inside the box and 0 where a bound is active.
void clamp_output(std::span<ad::Var> v, const Box& box);

void save(const NetParams& params, std::ostream& os);
NetParams load(std::istream& is);
void save_file(const NetParams& params, const std::string& path);
NetParams load_file(const std::string& path);

}  // namespace mfnn::nn
