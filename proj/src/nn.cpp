#include "mfnn/nn.hpp"

#include "mfnn/rng.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <random>
#include <stdexcept>

namespace mfnn::nn {

std::string_view to_string(Activation a) {
    switch (a) {
        case Activation::relu: return "relu";
        case Activation::sigmoid: return "sigmoid";
        case Activation::tanh: return "tanh";
        case Activation::sine: return "sine";
    }
    return "unknown";
}

Activation activation_from_string(std::string_view name) {
    if (name == "relu") return Activation::relu;
    if (name == "sigmoid") return Activation::sigmoid;
    if (name == "tanh") return Activation::tanh;
    if (name == "sine" || name == "sin") return Activation::sine;
    throw std::invalid_argument("unknown activation '" + std::string(name) + "'");
}

Architecture Architecture::mlp(std::size_t input_dim, std::span<const std::size_t> hidden, std::size_t output_dim,
                               Activation act) {
    Architecture a;
    a.layer_dims.push_back(input_dim);
    a.layer_dims.insert(a.layer_dims.end(), hidden.begin(), hidden.end());
    a.layer_dims.push_back(output_dim);
    a.hidden_activation = act;
    a.validate();
    return a;
}

void Architecture::validate() const {
    if (layer_dims.size() < 2) throw std::invalid_argument("architecture needs at least input and output dims");
    for (std::size_t d : layer_dims)
        if (d < 1) throw std::invalid_argument("architecture: every layer dim must be >= 1");
}

std::size_t Architecture::n_params() const {
    std::size_t n = 0;
    for (std::size_t i = 0; i + 1 < layer_dims.size(); ++i) n += layer_dims[i + 1] * (layer_dims[i] + 1);
    return n;
}

void NetParams::validate() const {
    arch.validate();
    if (theta.size() != arch.n_params())
        throw std::invalid_argument("theta has " + std::to_string(theta.size()) + " entries, architecture needs " +
                                    std::to_string(arch.n_params()));
    for (double v : theta)
        if (!std::isfinite(v)) throw std::invalid_argument("theta contains a non-finite entry");
}

NetParams init(const Architecture& arch, std::uint64_t seed, InitScheme scheme) {
    arch.validate();
    NetParams p{arch, std::vector<double>(arch.n_params(), 0.0)};
    if (scheme == InitScheme::zeros) return p;

    Rng rng(seed);
    std::size_t off = 0;
    for (std::size_t i = 0; i < arch.n_layers(); ++i) {
        const std::size_t din = arch.layer_dims[i];
        const std::size_t dout = arch.layer_dims[i + 1];
        const double bound = 1.0 / std::sqrt(static_cast<double>(din));
        std::uniform_real_distribution<double> u(-bound, bound);
        off += dout;  // biases stay 0
        for (std::size_t k = 0; k < dout * din; ++k) p.theta[off + k] = u(rng);
        off += dout * din;
    }
    return p;
}

namespace {

inline double activate(Activation a, double x) {
    switch (a) {
        case Activation::relu: return x > 0.0 ? x : 0.0;
        case Activation::sigmoid: return ad::detail::sigmoid_value(x);
        case Activation::tanh: return std::tanh(x);
        case Activation::sine: return std::sin(x);
    }
    return x;
}

inline ad::Var activate(Activation a, const ad::Var& x) {
    switch (a) {
        case Activation::relu: return ad::relu(x);
        case Activation::sigmoid: return ad::sigmoid(x);
        case Activation::tanh: return ad::tanh(x);
        case Activation::sine: return ad::sin(x);
    }
    return x;
}

void check_input(const Architecture& arch, std::size_t n_theta, std::size_t n_input) {
    if (n_theta != arch.n_params())
        throw std::invalid_argument("forward: theta length does not match the architecture");
    if (n_input != arch.input_dim())
        throw std::invalid_argument("forward: input has " + std::to_string(n_input) + " coordinates, expected " +
                                    std::to_string(arch.input_dim()));
}

}  // namespace

std::vector<double> forward(const NetParams& params, std::span<const double> input) {
    const Architecture& arch = params.arch;
    check_input(arch, params.theta.size(), input.size());
    std::vector<double> cur(input.begin(), input.end());
    std::vector<double> next;
    std::size_t off = 0;
    for (std::size_t i = 0; i < arch.n_layers(); ++i) {
        const std::size_t din = arch.layer_dims[i];
        const std::size_t dout = arch.layer_dims[i + 1];
        const bool hidden = i + 1 < arch.n_layers();
        const double* bias = params.theta.data() + off;
        const double* w = bias + dout;
        next.assign(dout, 0.0);
        for (std::size_t r = 0; r < dout; ++r) {
            double acc = bias[r];
            for (std::size_t j = 0; j < din; ++j) acc += w[r * din + j] * cur[j];
            next[r] = hidden ? activate(arch.hidden_activation, acc) : acc;
        }
        off += dout * (din + 1);
        cur.swap(next);
    }
    return cur;
}

std::vector<ad::Var> forward(const Architecture& arch, std::span<const ad::Var> theta,
                             std::span<const ad::Var> input) {
    check_input(arch, theta.size(), input.size());
    std::vector<ad::Var> cur(input.begin(), input.end());
    std::vector<ad::Var> next;
    std::size_t off = 0;
    for (std::size_t i = 0; i < arch.n_layers(); ++i) {
        const std::size_t din = arch.layer_dims[i];
        const std::size_t dout = arch.layer_dims[i + 1];
        const bool hidden = i + 1 < arch.n_layers();
        next.clear();
        next.reserve(dout);
        for (std::size_t r = 0; r < dout; ++r) {
            ad::Var acc = ad::affine(theta[off + r], theta.subspan(off + dout + r * din, din), cur);
            next.push_back(hidden ? activate(arch.hidden_activation, acc) : acc);
        }
        off += dout * (din + 1);
        cur.swap(next);
    }
    return cur;
}

Box Box::unbounded(std::size_t dim) {
    return Box{std::vector<double>(dim, -std::numeric_limits<double>::infinity()),
               std::vector<double>(dim, std::numeric_limits<double>::infinity())};
}

void Box::validate() const {
    if (lo.size() != hi.size()) throw std::invalid_argument("box: lo/hi size mismatch");
    for (std::size_t k = 0; k < lo.size(); ++k)
        if (!(lo[k] <= hi[k])) throw std::invalid_argument("box: lo > hi in coordinate " + std::to_string(k));
}

std::vector<double> clamp_output(std::span<const double> v, const Box& box) {
    box.validate();
    if (v.size() != box.lo.size()) throw std::invalid_argument("clamp_output: dimension mismatch");
    std::vector<double> out(v.begin(), v.end());
    for (std::size_t k = 0; k < out.size(); ++k) {
        if (out[k] < box.lo[k]) out[k] = box.lo[k];
        else if (out[k] > box.hi[k]) out[k] = box.hi[k];
    }
    return out;
}

void clamp_output(std::span<ad::Var> v, const Box& box) {
    box.validate();
    if (v.size() != box.lo.size()) throw std::invalid_argument("clamp_output: dimension mismatch");
    for (std::size_t k = 0; k < v.size(); ++k) {
        if (v[k].value() < box.lo[k]) v[k] = ad::Var(box.lo[k]);
        else if (v[k].value() > box.hi[k]) v[k] = ad::Var(box.hi[k]);
    }
}

namespace {

constexpr std::array<char, 4> kMagic{'M', 'F', 'N', 'N'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void put_le(std::ostream& os, T v) {
    static_assert(std::is_integral_v<T>);
    std::array<unsigned char, sizeof(T)> b{};
    for (std::size_t i = 0; i < sizeof(T); ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
    os.write(reinterpret_cast<const char*>(b.data()), sizeof(T));
}

template <class T>
T get_le(std::istream& is) {
    std::array<unsigned char, sizeof(T)> b{};
    if (!is.read(reinterpret_cast<char*>(b.data()), sizeof(T)))
        throw std::runtime_error("network file truncated");
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<T>(b[i]) << (8 * i));
    return v;
}

}  // namespace

void save(const NetParams& params, std::ostream& os) {
    params.validate();
    os.write(kMagic.data(), kMagic.size());
    put_le<std::uint32_t>(os, kVersion);
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(params.arch.hidden_activation));
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(params.arch.layer_dims.size()));
    for (std::size_t d : params.arch.layer_dims) put_le<std::uint32_t>(os, static_cast<std::uint32_t>(d));
    put_le<std::uint64_t>(os, params.theta.size());
    for (double v : params.theta) put_le<std::uint64_t>(os, std::bit_cast<std::uint64_t>(v));
    if (!os) throw std::runtime_error("failed writing network parameters");
}

NetParams load(std::istream& is) {
    std::array<char, 4> magic{};
    if (!is.read(magic.data(), magic.size()) || magic != kMagic)
        throw std::runtime_error("not a network parameter file (bad magic)");
    if (get_le<std::uint32_t>(is) != kVersion) throw std::runtime_error("unsupported network file version");
    NetParams p;
    const auto act = get_le<std::uint32_t>(is);
    if (act > 3) throw std::runtime_error("network file: unknown activation id");
    p.arch.hidden_activation = static_cast<Activation>(act);
    const auto n_dims = get_le<std::uint32_t>(is);
    for (std::uint32_t i = 0; i < n_dims; ++i) p.arch.layer_dims.push_back(get_le<std::uint32_t>(is));
    const auto n_theta = get_le<std::uint64_t>(is);
    p.arch.validate();
    if (n_theta != p.arch.n_params()) throw std::runtime_error("network file: theta length mismatch");
    p.theta.resize(n_theta);
    for (auto& v : p.theta) v = std::bit_cast<double>(get_le<std::uint64_t>(is));
    p.validate();
    return p;
}

void save_file(const NetParams& params, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open " + path + " for writing");
    save(params, os);
}

NetParams load_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open " + path);
    return load(is);
}

}  // namespace mfnn::nn
