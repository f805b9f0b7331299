#include "lofi/nn.hpp"

#include <cmath>

#include "lofi/error.hpp"

namespace lofi {

template <class T>
MlpParams<T> MlpParams<T>::zeros(std::span<const int> dims) {
  if (dims.size() < 2) throw Error(ErrorCode::Config, "an MLP needs at least in/out dims");
  MlpParams p;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    if (dims[l] <= 0 || dims[l + 1] <= 0) {
      throw Error(ErrorCode::Config, "MLP widths must be positive");
    }
    p.layers.push_back({Matrix<T>::Zero(dims[l + 1], dims[l]), RowVector<T>::Zero(dims[l + 1])});
  }
  return p;
}

template <class T>
MlpParams<T> MlpParams<T>::he_normal(std::span<const int> dims, Rng& rng,
                                     bool zero_output) {
  MlpParams p = zeros(dims);
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const bool output = l + 1 == p.layers.size();
    if (output && zero_output) continue;
    const double fan_in = static_cast<double>(dims[l]);
    std::normal_distribution<double> dist(0.0, std::sqrt((output ? 1.0 : 2.0) / fan_in));
    auto& w = p.layers[l].weight;
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<T>(dist(rng));
  }
  return p;
}

template <class T>
MlpParams<T> MlpParams<T>::zeros_like() const {
  return zeros(dims());
}

template <class T>
int MlpParams<T>::in_width() const {
  return static_cast<int>(layers.front().weight.cols());
}

template <class T>
int MlpParams<T>::out_width() const {
  return static_cast<int>(layers.back().weight.rows());
}

template <class T>
std::vector<int> MlpParams<T>::dims() const {
  std::vector<int> d{in_width()};
  for (const auto& layer : layers) d.push_back(static_cast<int>(layer.weight.rows()));
  return d;
}

template <class T>
std::size_t MlpParams<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& layer : layers) n += layer.weight.size() + layer.bias.size();
  return n;
}

template <class T>
void MlpParams<T>::collect(const std::string& prefix, std::vector<TensorRef<T>>& out) {
  for (std::size_t l = 0; l < layers.size(); ++l) {
    auto& layer = layers[l];
    const std::string base = prefix + ".layer" + std::to_string(l);
    out.push_back({base + ".weight", layer.weight.data(),
                   {static_cast<int>(layer.weight.rows()), static_cast<int>(layer.weight.cols())}});
    out.push_back({base + ".bias", layer.bias.data(), {static_cast<int>(layer.bias.size())}});
  }
}

template <class T>
void MlpParams<T>::set_zero() {
  for (auto& layer : layers) {
    layer.weight.setZero();
    layer.bias.setZero();
  }
}

template <class T>
Matrix<T> mlp_forward(const MlpParams<T>& params, const Matrix<T>& x,
                      MlpCache<T>* cache) {
  if (x.cols() != params.in_width()) {
    throw Error(ErrorCode::Shape, "MLP input width " + std::to_string(x.cols()) +
                                      " != " + std::to_string(params.in_width()));
  }
  if (cache) {
    cache->inputs.clear();
    cache->inputs.reserve(params.layers.size());
    cache->inputs.push_back(x);
  }
  Matrix<T> a = x;
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const auto& layer = params.layers[l];
    Matrix<T> z(a.rows(), layer.weight.rows());
    z.noalias() = a * layer.weight.transpose();
    z.rowwise() += layer.bias;
    if (l + 1 < params.layers.size()) {
      z = z.cwiseMax(T(0));
      if (cache) cache->inputs.push_back(z);
    }
    a = std::move(z);
  }
  return a;
}

template <class T>
void mlp_backward(const MlpParams<T>& params, const MlpCache<T>& cache,
                  const Matrix<T>& upstream, MlpParams<T>& grads,
                  Matrix<T>* grad_input) {
  const std::size_t depth = params.layers.size();
  if (cache.inputs.size() != depth || upstream.cols() != params.out_width() ||
      cache.inputs.front().rows() != upstream.rows()) {
    throw Error(ErrorCode::Shape, "MLP cache does not match this backward call");
  }
  Matrix<T> dz = upstream;
  for (std::size_t l = depth; l-- > 0;) {
    const auto& layer = params.layers[l];
    const Matrix<T>& input = cache.inputs[l];
    grads.layers[l].weight.noalias() += dz.transpose() * input;
    grads.layers[l].bias += dz.colwise().sum();
    if (l == 0 && !grad_input) break;
    Matrix<T> da(dz.rows(), layer.weight.cols());
    da.noalias() = dz * layer.weight;
    if (l == 0) {
      *grad_input = std::move(da);
    } else {
      dz = (input.array() > T(0)).select(da.array(), T(0));
    }
  }
}

template <class T>
MultiMlpParams<T> MultiMlpParams<T>::he_normal(int input_width, int branch_count,
                                               std::span<const int> branch_hidden,
                                               int branch_out,
                                               std::span<const int> mixer_hidden,
                                               int out, Rng& rng) {
  if (branch_count <= 0 || input_width % branch_count != 0) {
    throw Error(ErrorCode::Config, "patch width " + std::to_string(input_width) +
                                       " is not divisible by branch count " +
                                       std::to_string(branch_count));
  }
  MultiMlpParams p;
  std::vector<int> bd{input_width / branch_count};
  bd.insert(bd.end(), branch_hidden.begin(), branch_hidden.end());
  bd.push_back(branch_out);
  for (int j = 0; j < branch_count; ++j) p.branches.push_back(MlpParams<T>::he_normal(bd, rng));
  std::vector<int> md{branch_count * branch_out};
  md.insert(md.end(), mixer_hidden.begin(), mixer_hidden.end());
  md.push_back(out);
  p.mixer = MlpParams<T>::he_normal(md, rng);
  return p;
}

template <class T>
MultiMlpParams<T> MultiMlpParams<T>::zeros_like() const {
  MultiMlpParams p;
  for (const auto& b : branches) p.branches.push_back(b.zeros_like());
  p.mixer = mixer.zeros_like();
  return p;
}

template <class T>
int MultiMlpParams<T>::chunk_width() const {
  return branches.front().in_width();
}

template <class T>
int MultiMlpParams<T>::in_width() const {
  return chunk_width() * static_cast<int>(branches.size());
}

template <class T>
int MultiMlpParams<T>::out_width() const {
  return mixer.out_width();
}

template <class T>
std::size_t MultiMlpParams<T>::parameter_count() const {
  std::size_t n = mixer.parameter_count();
  for (const auto& b : branches) n += b.parameter_count();
  return n;
}

template <class T>
void MultiMlpParams<T>::collect(const std::string& prefix,
                                std::vector<TensorRef<T>>& out) {
  for (std::size_t j = 0; j < branches.size(); ++j) {
    branches[j].collect(prefix + ".branch" + std::to_string(j), out);
  }
  mixer.collect(prefix + ".mixer", out);
}

template <class T>
void MultiMlpParams<T>::set_zero() {
  for (auto& b : branches) b.set_zero();
  mixer.set_zero();
}

template <class T>
Matrix<T> multimlp_forward(const MultiMlpParams<T>& params, const Matrix<T>& x,
                           MultiMlpCache<T>* cache) {
  if (x.cols() != params.in_width()) {
    throw Error(ErrorCode::Shape, "MultiMLP input width mismatch");
  }
  const int chunk = params.chunk_width();
  const auto branch_count = static_cast<int>(params.branches.size());
  const int branch_out = params.branches.front().out_width();
  if (cache) cache->branches.resize(params.branches.size());
  Matrix<T> concat(x.rows(), branch_count * branch_out);
  for (int j = 0; j < branch_count; ++j) {
    Matrix<T> part = x.middleCols(j * chunk, chunk);
    concat.middleCols(j * branch_out, branch_out) =
        mlp_forward(params.branches[j], part, cache ? &cache->branches[j] : nullptr);
  }
  return mlp_forward(params.mixer, concat, cache ? &cache->mixer : nullptr);
}

template <class T>
void multimlp_backward(const MultiMlpParams<T>& params, const MultiMlpCache<T>& cache,
                       const Matrix<T>& upstream, MultiMlpParams<T>& grads,
                       Matrix<T>* grad_input) {
  if (cache.branches.size() != params.branches.size()) {
    throw Error(ErrorCode::Shape, "MultiMLP cache does not match this backward call");
  }
  Matrix<T> dconcat;
  mlp_backward(params.mixer, cache.mixer, upstream, grads.mixer, &dconcat);
  const int chunk = params.chunk_width();
  const int branch_out = params.branches.front().out_width();
  if (grad_input) grad_input->resize(upstream.rows(), params.in_width());
  for (std::size_t j = 0; j < params.branches.size(); ++j) {
    Matrix<T> dout = dconcat.middleCols(static_cast<Eigen::Index>(j) * branch_out, branch_out);
    Matrix<T> dpart;
    mlp_backward(params.branches[j], cache.branches[j], dout, grads.branches[j],
                 grad_input ? &dpart : nullptr);
    if (grad_input) grad_input->middleCols(static_cast<Eigen::Index>(j) * chunk, chunk) = dpart;
  }
}

template <class T>
void AdamState<T>::init(std::span<const TensorRef<T>> params) {
  m.clear();
  v.clear();
  for (const auto& p : params) {
    m.emplace_back(p.size(), T(0));
    v.emplace_back(p.size(), T(0));
  }
  t = 0;
}

template <class T>
void adam_step(std::span<const TensorRef<T>> params,
               std::span<const TensorRef<T>> grads, AdamState<T>& state,
               double lr) {
  if (params.size() != grads.size() || state.m.size() != params.size()) {
    throw Error(ErrorCode::Shape, "Adam parameter/gradient/state lists differ");
  }
  state.t += 1;
  const double b1 = state.hyper.beta1;
  const double b2 = state.hyper.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::size_t n = params[i].size();
    if (grads[i].size() != n || state.m[i].size() != n) {
      throw Error(ErrorCode::Shape, "Adam shape mismatch for " + params[i].name);
    }
    T* p = params[i].data;
    const T* g = grads[i].data;
    T* m = state.m[i].data();
    T* v = state.v[i].data();
    for (std::size_t k = 0; k < n; ++k) {
      m[k] = static_cast<T>(b1 * m[k] + (1.0 - b1) * g[k]);
      v[k] = static_cast<T>(b2 * v[k] + (1.0 - b2) * static_cast<double>(g[k]) * g[k]);
      const double mhat = m[k] / c1;
      const double vhat = v[k] / c2;
      p[k] = static_cast<T>(p[k] - lr * mhat / (std::sqrt(vhat) + state.hyper.eps));
    }
  }
}

template <class T>
L1Result<T> l1_loss(const Matrix<T>& pred, const Matrix<T>& target) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols()) {
    throw Error(ErrorCode::Shape, "l1_loss shape mismatch");
  }
  L1Result<T> r;
  const auto n = static_cast<double>(pred.size());
  r.grad.resize(pred.rows(), pred.cols());
  double sum = 0.0;
  const T scale = static_cast<T>(1.0 / n);
  for (Eigen::Index i = 0; i < pred.size(); ++i) {
    const T d = pred.data()[i] - target.data()[i];
    sum += std::abs(static_cast<double>(d));
    r.grad.data()[i] = d > T(0) ? scale : (d < T(0) ? -scale : T(0));
  }
  r.loss = sum / n;
  return r;
}

#define LOFI_INSTANTIATE_NN(T)                                                       \
  template struct MlpParams<T>;                                                      \
  template struct MultiMlpParams<T>;                                                 \
  template struct AdamState<T>;                                                      \
  template Matrix<T> mlp_forward(const MlpParams<T>&, const Matrix<T>&, MlpCache<T>*); \
  template void mlp_backward(const MlpParams<T>&, const MlpCache<T>&,                \
                             const Matrix<T>&, MlpParams<T>&, Matrix<T>*);           \
  template Matrix<T> multimlp_forward(const MultiMlpParams<T>&, const Matrix<T>&,    \
                                      MultiMlpCache<T>*);                            \
  template void multimlp_backward(const MultiMlpParams<T>&, const MultiMlpCache<T>&, \
                                  const Matrix<T>&, MultiMlpParams<T>&, Matrix<T>*); \
  template void adam_step(std::span<const TensorRef<T>>,                             \
                          std::span<const TensorRef<T>>, AdamState<T>&, double);     \
  template L1Result<T> l1_loss(const Matrix<T>&, const Matrix<T>&);

LOFI_INSTANTIATE_NN(float)
LOFI_INSTANTIATE_NN(double)

}  // namespace lofi
