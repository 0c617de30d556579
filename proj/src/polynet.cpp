#include "bpode/polynet.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "bpode/symexpand.hpp"

namespace bpode {

void PolyNetArch::validate() const {
  if (n_inputs < 1) throw ValidationError("arch: n_inputs must be >= 1");
  if (degree < 1) throw ValidationError("arch: degree must be >= 1");
  if (width < 1) throw ValidationError("arch: width must be >= 1");
  if (n_outputs < 1) throw ValidationError("arch: n_outputs must be >= 1");
}

std::size_t count_params(const PolyNetArch& arch) {
  arch.validate();
  const std::size_t w = arch.width, in = arch.n_inputs + 1;
  return w * in + (arch.degree - 1) * (w * in + w * w) + arch.n_outputs * w;
}

std::size_t width_for_param_count(PolyNetArch arch, std::size_t target, std::size_t max_width) {
  std::size_t best = 1;
  std::size_t best_gap = std::numeric_limits<std::size_t>::max();
  for (std::size_t w = 1; w <= max_width; ++w) {
    arch.width = w;
    const std::size_t n = count_params(arch);
    const std::size_t gap = n > target ? n - target : target - n;
    if (gap < best_gap) {
      best_gap = gap;
      best = w;
    }
  }
  return best;
}

ParamLayout param_layout(const PolyNetArch& arch) {
  arch.validate();
  ParamLayout layout;
  const std::size_t w = arch.width, in = arch.n_inputs + 1;
  std::size_t off = 0;
  layout.first = {off, w, in};
  off += w * in;
  for (std::size_t l = 1; l < arch.degree; ++l) {
    layout.input.push_back({off, w, in});
    off += w * in;
    layout.hidden.push_back({off, w, w});
    off += w * w;
  }
  layout.output = {off, arch.n_outputs, w};
  off += arch.n_outputs * w;
  layout.total = off;
  return layout;
}

ParamVector::ParamVector(PolyNetArch arch, std::vector<double> values) : arch_(arch), values_(std::move(values)) {
  if (values_.size() != count_params(arch_)) {
    std::ostringstream msg;
    msg << "parameter vector has " << values_.size() << " entries, architecture needs " << count_params(arch_);
    throw ValidationError(msg.str());
  }
}

RowMatrix ParamVector::block(const LayerBlock& b) const {
  return Eigen::Map<const RowMatrix>(values_.data() + b.offset, static_cast<Eigen::Index>(b.rows),
                                     static_cast<Eigen::Index>(b.cols));
}

void ParamVector::set_block(const LayerBlock& b, const Eigen::Ref<const RowMatrix>& m) {
  Eigen::Map<RowMatrix>(values_.data() + b.offset, static_cast<Eigen::Index>(b.rows),
                        static_cast<Eigen::Index>(b.cols)) = m;
}

namespace {

Tensor block_tensor(std::span<const double> theta, const LayerBlock& b) {
  return Tensor({b.rows, b.cols}, std::vector<double>(theta.begin() + static_cast<std::ptrdiff_t>(b.offset),
                                                      theta.begin() + static_cast<std::ptrdiff_t>(b.offset + b.rows * b.cols)));
}

}  // namespace

std::vector<double> forward(std::span<const double> theta, const PolyNetArch& arch, std::span<const double> x) {
  if (x.size() != arch.n_inputs) throw ValidationError("forward: state has wrong dimension");
  const ParamLayout layout = param_layout(arch);
  if (theta.size() != layout.total) throw ValidationError("forward: parameter vector has wrong length");
  const std::size_t w = arch.width;
  Tensor xt = Tensor::matrix(1, arch.n_inputs + 1);
  xt[0] = 1.0;
  std::copy(x.begin(), x.end(), xt.data() + 1);
  Tensor h = Tensor::matrix(1, w);
  kernels::matmul_nt(xt, block_tensor(theta, layout.first), h);
  Tensor u = Tensor::matrix(1, w), v = Tensor::matrix(1, w);
  for (std::size_t l = 0; l + 1 < arch.degree; ++l) {
    kernels::matmul_nt(xt, block_tensor(theta, layout.input[l]), u);
    kernels::matmul_nt(h, block_tensor(theta, layout.hidden[l]), v);
    for (std::size_t i = 0; i < w; ++i) h[i] = u[i] * v[i];
  }
  Tensor out = Tensor::matrix(1, arch.n_outputs);
  kernels::matmul_nt(h, block_tensor(theta, layout.output), out);
  return out.storage();
}

Var forward(Var theta, const PolyNetArch& arch, Var states) {
  const ParamLayout layout = param_layout(arch);
  if (theta.value().size() != layout.total) throw ValidationError("forward: parameter vector has wrong length");
  if (states.cols() != arch.n_inputs) throw ValidationError("forward: states have wrong dimension");
  auto block = [&](const LayerBlock& b) { return slice(theta, b.offset, b.rows, b.cols); };
  Var xt = prepend_ones(states);
  Var h = matmul_nt(xt, block(layout.first));
  for (std::size_t l = 0; l + 1 < arch.degree; ++l) {
    Var u = matmul_nt(xt, block(layout.input[l]));
    Var v = matmul_nt(h, block(layout.hidden[l]));
    h = mul(u, v);
  }
  return matmul_nt(h, block(layout.output));
}

ParamVector init_params(const PolyNetArch& arch, RngStream& rng, double min_coeff, double max_coeff,
                        int max_attempts) {
  if (!(min_coeff > 0.0 && max_coeff >= min_coeff)) throw ValidationError("init_params: bad coefficient range");
  const std::size_t n = count_params(arch);
  const auto basis = monomial_basis(arch.n_inputs, arch.degree);
  // Every expanded coefficient is a sum of products of exactly 2*degree parameters.
  const double homogeneity = 2.0 * static_cast<double>(arch.degree);
  for (int attempt = 0; attempt < max_attempts; ++attempt) {
    std::vector<double> raw(n);
    for (auto& v : raw) v = rng.uniform(-1.0, 1.0);
    const PolynomialForm form = expand(raw, arch);
    double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
    for (const auto& poly : form) {
      for (const auto& m : basis) {
        const double c = std::abs(poly.coeff(m));
        lo = std::min(lo, c);
        hi = std::max(hi, c);
      }
    }
    if (!(lo > 0.0) || hi / lo > max_coeff / min_coeff) continue;
    const double factor = std::sqrt((min_coeff / lo) * (max_coeff / hi));
    const double s = std::pow(factor, 1.0 / homogeneity);
    for (auto& v : raw) v *= s;
    ParamVector theta(arch, raw);
    bool ok = true;
    for (const auto& poly : expand(theta)) {
      for (const auto& m : basis) {
        const double c = std::abs(poly.coeff(m));
        ok = ok && c >= min_coeff && c <= max_coeff;
      }
    }
    if (ok) return theta;
  }
  throw NumericError("init_params: no draw met the coefficient range");
}

}  // namespace bpode
