#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "bpode/autodiff.hpp"
#include "bpode/rng.hpp"

namespace bpode {

// Factorized polynomial network. With x~ = [1, x]:
//   h_1 = A_1 x~,  h_l = (A_l x~) * (B_l h_{l-1})  for l = 2..degree,  y = C h_degree.
// Each product layer raises the total degree by one; there are no activations.
struct PolyNetArch {
  std::size_t n_inputs = 1;
  std::size_t degree = 1;
  std::size_t width = 1;
  std::size_t n_outputs = 1;

  void validate() const;
  bool operator==(const PolyNetArch&) const = default;
};

std::size_t count_params(const PolyNetArch& arch);

/// Width whose parameter count is closest to `target` (ties go to the smaller width).
std::size_t width_for_param_count(PolyNetArch arch, std::size_t target, std::size_t max_width = 200);

// Offsets of each layer matrix inside the flat parameter vector (row-major blocks).
struct LayerBlock {
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
};

struct ParamLayout {
  LayerBlock first;                 // A_1: width x (n_inputs + 1)
  std::vector<LayerBlock> input;    // A_l, l >= 2: width x (n_inputs + 1)
  std::vector<LayerBlock> hidden;   // B_l, l >= 2: width x width
  LayerBlock output;                // C: n_outputs x width
  std::size_t total = 0;
};

ParamLayout param_layout(const PolyNetArch& arch);

// Flat parameter vector with its architecture attached.
class ParamVector {
 public:
  ParamVector() = default;
  ParamVector(PolyNetArch arch, std::vector<double> values);
  explicit ParamVector(PolyNetArch arch) : ParamVector(arch, std::vector<double>(count_params(arch), 0.0)) {}

  const PolyNetArch& arch() const { return arch_; }
  std::span<const double> values() const { return values_; }
  std::span<double> values() { return values_; }
  std::size_t size() const { return values_.size(); }
  double operator[](std::size_t i) const { return values_[i]; }
  double& operator[](std::size_t i) { return values_[i]; }

  /// Row-major copy of one layer matrix.
  RowMatrix block(const LayerBlock& b) const;
  void set_block(const LayerBlock& b, const Eigen::Ref<const RowMatrix>& m);

 private:
  PolyNetArch arch_;
  std::vector<double> values_;
};

/// Network output for a single state x (length n_inputs).
std::vector<double> forward(std::span<const double> theta, const PolyNetArch& arch, std::span<const double> x);
inline std::vector<double> forward(const ParamVector& theta, std::span<const double> x) {
  return forward(theta.values(), theta.arch(), x);
}

/// Batched forward on a tape: states is N x n_inputs, result N x n_outputs.
Var forward(Var theta, const PolyNetArch& arch, Var states);

/// Random parameters whose expanded monomial coefficients all have magnitude in
/// [min_coeff, max_coeff]. Throws NumericError after `max_attempts` rejections.
ParamVector init_params(const PolyNetArch& arch, RngStream& rng, double min_coeff = 1e-10,
                        double max_coeff = 1e-5, int max_attempts = 1000);

}  // namespace bpode
