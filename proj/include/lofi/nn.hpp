#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace lofi {

template <class T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using RowVector = Eigen::Matrix<T, 1, Eigen::Dynamic>;

using Rng = std::mt19937_64;

// Named view onto a parameter (or gradient / moment) buffer.
template <class T>
struct TensorRef {
  std::string name;
  T* data = nullptr;
  std::vector<int> shape;

  std::size_t size() const {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    return n;
  }
};

template <class T>
struct Dense {
  Matrix<T> weight;  // [out][in]
  RowVector<T> bias;  // [out]
};

// Affine layers with ReLU between them and an identity output.
template <class T>
struct MlpParams {
  std::vector<Dense<T>> layers;

  // dims = {in, hidden..., out}. Weights are zero.
  static MlpParams zeros(std::span<const int> dims);
  // He-normal (fan-in) for layers feeding a ReLU, fan-in normal with unit
  // gain for the output layer; zero biases. `zero_output` zeroes the last
  // layer entirely.
  static MlpParams he_normal(std::span<const int> dims, Rng& rng,
                             bool zero_output = false);

  MlpParams zeros_like() const;
  int in_width() const;
  int out_width() const;
  std::vector<int> dims() const;
  std::size_t parameter_count() const;
  void collect(const std::string& prefix, std::vector<TensorRef<T>>& out);
  void set_zero();
};

template <class T>
struct MlpCache {
  // Input of every layer; entry 0 is the network input.
  std::vector<Matrix<T>> inputs;
};

template <class T>
Matrix<T> mlp_forward(const MlpParams<T>& params, const Matrix<T>& x,
                      MlpCache<T>* cache = nullptr);

// Accumulates parameter gradients into `grads` (which must be shaped like
// `params`). When `grad_input` is non-null it receives dL/dx.
template <class T>
void mlp_backward(const MlpParams<T>& params, const MlpCache<T>& cache,
                  const Matrix<T>& upstream, MlpParams<T>& grads,
                  Matrix<T>* grad_input);

// Branch MLPs over contiguous input chunks, concatenated into a mixer MLP.
template <class T>
struct MultiMlpParams {
  std::vector<MlpParams<T>> branches;
  MlpParams<T> mixer;

  static MultiMlpParams he_normal(int input_width, int branch_count,
                                  std::span<const int> branch_hidden,
                                  int branch_out, std::span<const int> mixer_hidden,
                                  int out, Rng& rng);
  MultiMlpParams zeros_like() const;
  int in_width() const;
  int out_width() const;
  int chunk_width() const;
  std::size_t parameter_count() const;
  void collect(const std::string& prefix, std::vector<TensorRef<T>>& out);
  void set_zero();
};

template <class T>
struct MultiMlpCache {
  std::vector<MlpCache<T>> branches;
  MlpCache<T> mixer;
};

template <class T>
Matrix<T> multimlp_forward(const MultiMlpParams<T>& params, const Matrix<T>& x,
                           MultiMlpCache<T>* cache = nullptr);

template <class T>
void multimlp_backward(const MultiMlpParams<T>& params, const MultiMlpCache<T>& cache,
                       const Matrix<T>& upstream, MultiMlpParams<T>& grads,
                       Matrix<T>* grad_input);

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <class T>
struct AdamState {
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
  std::int64_t t = 0;
  AdamHyper hyper;

  // Sizes the moment buffers to mirror `params`.
  void init(std::span<const TensorRef<T>> params);
};

// One bias-corrected Adam update over matching parameter / gradient lists.
template <class T>
void adam_step(std::span<const TensorRef<T>> params,
               std::span<const TensorRef<T>> grads, AdamState<T>& state,
               double lr);

template <class T>
struct L1Result {
  double loss = 0.0;
  Matrix<T> grad;
};

// Mean absolute error with subgradient sign(pred - target) / numel, sign(0) = 0.
template <class T>
L1Result<T> l1_loss(const Matrix<T>& pred, const Matrix<T>& target);

}  // namespace lofi
