#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "matter/numcore.hpp"
#include "matter/tensor.hpp"
#include "matter/tern.hpp"

namespace matter {

struct BackboneConfig {
  int in_bands = 4;
  int stem_channels = 16;
  std::vector<int> block_channels{16, 32};
  int descriptor_dim = 64;
  TernConfig tern;
  std::uint64_t rng_seed = 1;

  void validate() const;
  friend bool operator==(const BackboneConfig&, const BackboneConfig&) = default;
};

// Convolutions carry no bias terms, so the encoder is positively homogeneous
// in its input up to the final normalisation.
template <typename T>
struct BasicBackboneParams {
  struct Block {
    BasicTensor<T> conv1;  // [C_out, C_in, 3, 3]
    BasicTensor<T> conv2;  // [C_out, C_out, 3, 3]
    BasicTensor<T> skip;   // [C_out, C_in, 1, 1]; empty when C_in == C_out
  };

  BasicTensor<T> stem;  // [S, B, 3, 3]
  std::vector<Block> blocks;
  BasicTensor<T> projection;  // [D, C_last]

  // Stable (name, tensor) listing used by checkpoints and the optimiser.
  std::vector<std::pair<std::string, BasicTensor<T>*>> named();
  std::vector<std::pair<std::string, const BasicTensor<T>*>> named() const;

  // Zero tensors with identical layout, for gradient accumulation.
  BasicBackboneParams zeros_like() const;

  template <typename U>
  BasicBackboneParams<U> cast() const;
};

using BackboneParams = BasicBackboneParams<float>;

BackboneParams init_backbone(const BackboneConfig& cfg);

// Intermediate activations kept for the backward pass.
template <typename T>
struct BackboneTape {
  struct BlockTape {
    BasicTensor<T> input;
    BasicTensor<T> mid_pre;   // conv1 output before ReLU
    BasicTensor<T> mid;       // after ReLU
    BasicTensor<T> out_pre;   // conv2 + skip before ReLU
    ConvColumns<T> conv1_cols, conv2_cols, skip_cols;
  };
  BasicTensor<T> input;     // [B,N,h,w]
  BasicTensor<T> stem_pre;  // [S,N,h,w]
  ConvColumns<T> stem_cols;
  std::optional<TernStack<T>> tern;
  std::vector<BlockTape> blocks;
  BasicTensor<T> last;      // final block output [C,N,h,w]
  BasicTensor<T> pooled;    // [N,C]
  BasicTensor<T> projected; // [N,D]
  BasicTensor<T> z;         // [N,D]
  std::vector<T> norms;     // |projected| per row
};

// patches [N,B,h,w] -> unit descriptors [N,D]. Each patch is also its own
// refinement guidance. Rows whose projection vanishes map to e_0.
template <typename T>
BasicTensor<T> encode_batch(const BasicBackboneParams<T>& params,
                            const BackboneConfig& cfg,
                            const BasicTensor<T>& patches,
                            BackboneTape<T>* tape = nullptr);

// Accumulates d(loss)/d(params) into grads given d(loss)/dz.
template <typename T>
void backbone_backward(const BasicBackboneParams<T>& params,
                       const BackboneConfig& cfg, const BackboneTape<T>& tape,
                       const BasicTensor<T>& grad_z,
                       BasicBackboneParams<T>& grads);

// Single patch [B,h,w] -> D-vector.
Tensor encode_patch(const BackboneParams& params, const BackboneConfig& cfg,
                    const Tensor& patch);

// Stem activations of a whole image [B,H,W] before and after the refinement
// stack, each [S,H,W]. Debug view only.
struct StemMaps {
  Tensor before;
  Tensor after;
};
StemMaps stem_maps(const BackboneParams& params, const BackboneConfig& cfg,
                   const Tensor& image);

}  // namespace matter
