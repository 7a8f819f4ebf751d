#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

namespace tgd::nn {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Activations are stored channel-major: rows are channels, columns run over
/// (batch, row, col) so one GEMM serves the whole batch.
template <typename T>
struct Tensor {
  Mat<T> m;
  int batch = 0, height = 0, width = 0;

  int channels() const { return static_cast<int>(m.rows()); }
  Eigen::Index plane() const { return static_cast<Eigen::Index>(height) * width; }
};

struct Conv {
  int cin = 0, cout = 0;
  std::size_t weight_offset = 0;  // cout x (cin * 9), row-major
  std::size_t bias_offset = 0;
};

struct ResBlock {
  Conv first, second;
};

struct UNetShape {
  int in_channels = 2;  // scaled image + noise-level channel
  int base_width = 32;
  std::vector<int> multipliers{1, 2};
};

/// Small residual U-Net F(x, sigma): 3x3 convolutions, SiLU, average-pool down,
/// nearest up, concatenated skips. The final convolution is zero-initialised.
template <typename T>
class UNet {
public:
  struct Cache {
    Tensor<T> input;
    Tensor<T> stem_pre;                         // conv_in output
    std::vector<Tensor<T>> enc_in;              // resblock inputs per level
    std::vector<Tensor<T>> enc_mid, enc_mid_act;
    std::vector<Tensor<T>> enc_out;             // e_l
    std::vector<Tensor<T>> pooled;              // avgpool(e_{l-1}) for l >= 1
    std::vector<Tensor<T>> down_pre;            // conv_down output
    std::vector<Tensor<T>> concat;              // decoder concat inputs
    std::vector<Tensor<T>> up_pre;              // conv_up output
    std::vector<Tensor<T>> dec_in, dec_mid, dec_mid_act;
    Tensor<T> head_in;                          // d_0
    Tensor<T> head_act;                         // silu(d_0)
  };

  explicit UNet(UNetShape shape);

  const UNetShape& shape() const { return shape_; }
  int levels() const { return static_cast<int>(shape_.multipliers.size()); }
  int width_at(int level) const { return shape_.base_width * shape_.multipliers[level]; }
  int feature_dim() const { return width_at(levels() - 1); }
  /// Spatial sizes must be divisible by this.
  int size_multiple() const { return 1 << (levels() - 1); }

  std::size_t num_params() const { return n_params_; }
  std::vector<T>& params() { return params_; }
  const std::vector<T>& params() const { return params_; }

  void init(std::uint64_t seed);

  /// Returns the single-channel output. When `cache` is non-null every
  /// intermediate needed by backward() is stored there.
  Tensor<T> forward(const Tensor<T>& input, Cache* cache) const;

  /// Accumulates parameter gradients into `grad` (size num_params()) and
  /// optionally returns the gradient with respect to the input tensor.
  void backward(const Cache& cache, const Tensor<T>& grad_out, std::vector<T>& grad,
                Tensor<T>* grad_input = nullptr) const;

  /// Per-sample spatial mean of the deepest encoder activation (batch x q), not normalised.
  Mat<T> pooled_features(const Cache& cache) const;

  /// Forward through the encoder only; returns the deepest activation.
  Tensor<T> encode(const Tensor<T>& input) const;

private:
  Conv add_conv(int cin, int cout);

  UNetShape shape_;
  std::size_t n_params_ = 0;
  std::vector<T> params_;
  Conv stem_, head_;
  std::vector<ResBlock> enc_res_, dec_res_;
  std::vector<Conv> down_;  // index l for l >= 1
  std::vector<Conv> up_;    // index l for l <= L-2
};

// Building blocks, exposed for unit tests.
template <typename T>
Tensor<T> conv3x3(const Tensor<T>& x, const T* weight, const T* bias, int cout);
template <typename T>
void conv3x3_backward(const Tensor<T>& x, const T* weight, const Tensor<T>& grad_out, T* grad_weight,
                      T* grad_bias, Tensor<T>* grad_x);
template <typename T>
Tensor<T> silu(const Tensor<T>& x);
template <typename T>
Tensor<T> silu_backward(const Tensor<T>& x, const Tensor<T>& grad_out);
template <typename T>
Tensor<T> avgpool2(const Tensor<T>& x);
template <typename T>
Tensor<T> avgpool2_backward(const Tensor<T>& grad_out);
template <typename T>
Tensor<T> upsample2(const Tensor<T>& x);
template <typename T>
Tensor<T> upsample2_backward(const Tensor<T>& grad_out);

}  // namespace tgd::nn
