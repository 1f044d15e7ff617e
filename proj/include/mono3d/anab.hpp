#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <iosfwd>
#include <vector>

#include "mono3d/ops.hpp"
#include "mono3d/tape.hpp"
#include "mono3d/tensor.hpp"

namespace mono3d {

struct PyramidLevel {
  std::size_t rows = 1;
  std::size_t cols = 1;
  std::size_t bins() const { return rows * cols; }
};

/// Bin layout of attention-weighted pyramid pooling.
struct PyramidSpec {
  std::vector<PyramidLevel> levels = {{1, 1}, {4, 4}, {8, 8}, {16, 16}};
  /// Added to the attention mass of every bin.
  double epsilon = 1e-6;

  static PyramidSpec squares(std::initializer_list<std::size_t> sides,
                             double epsilon = 1e-6);
  /// Total descriptor count L.
  std::size_t descriptor_count() const;
  void validate() const;
};

/// Which branches the spatial attention map touches.
enum class AttentionSharing {
  /// Key and value are both pooled with the same map (default).
  kKeyValue,
  /// Query is masked by the map and the key pooled with it; value is pooled
  /// uniformly.
  kQueryKey,
};

struct AnabParams {
  ConvSpec query;
  ConvSpec key;
  ConvSpec value;
  ConvSpec attention;  // C -> 1
  ConvSpec output;
  PyramidSpec pyramid;
  AttentionSharing sharing = AttentionSharing::kKeyValue;
  bool residual = true;

  std::size_t channels() const { return query.in_channels(); }
  void validate() const;

  /// 1x1 projections with weights uniform in [-scale, scale].
  static AnabParams random(std::size_t channels, std::uint64_t seed,
                           double scale = 0.3);
  /// Identity query/key/value/output projections, zero attention conv.
  static AnabParams identity(std::size_t channels);
};

/// Tape handles for the learnable parts of an ANAB.
struct AnabVars {
  Var query_w, query_b;
  Var key_w, key_b;
  Var value_w, value_b;
  Var attention_w, attention_b;
  Var output_w, output_b;
};

AnabVars bind_anab(Tape& tape, const AnabParams& params, bool trainable = true);

/// Intermediate matrices of one forward pass.
struct AttentionTensors {
  Var query;       // N x C
  Var key;         // L x C
  Var value;       // L x C
  Var similarity;  // N x L
  Var output;      // N x C, softmax(similarity) * value
  Var attention_map;  // 1 x 1 x H x W
};

/// sigmoid(conv1x1(features)), one channel.
Var attention_map(Var features, Var weight, Var bias);

/// Attention-weighted pyramid pooling: for each level and bin (row-major),
/// sum(a * f) / (sum(a) + epsilon). Returns an L x C matrix, levels in order.
Var pa2_pool(Var features, Var attention, const PyramidSpec& spec);

/// Full block: query from a 1x1 conv at full resolution, key/value from 1x1
/// convs pooled by pa2_pool, softmax(Q K^T) V, output 1x1 conv, residual add.
Var anab_forward(Var features, const AnabVars& vars, const AnabParams& params,
                 AttentionTensors* trace = nullptr);

Tensor anab_forward(const Tensor& features, const AnabParams& params);
Tensor attention_map(const Tensor& features, const ConvSpec& conv1x1);
Tensor pa2_pool(const Tensor& features, const Tensor& attention,
                const PyramidSpec& spec);

/// Standard non-local block (softmax over all N positions) using the query,
/// key, value and output projections of params. Computed one query row at a
/// time; used as the timing baseline.
Tensor nonlocal_reference(const Tensor& features, const AnabParams& params);

struct ComplexityResult {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::size_t n = 0;  // positions
  std::size_t l = 0;  // pooled descriptors
  double anab_seconds = 0.0;
  double nonlocal_seconds = 0.0;
};

/// Median wall time over `runs` forward passes of ANAB and of the non-local
/// baseline on random features. Single-threaded.
ComplexityResult complexity_bench(std::size_t height, std::size_t width,
                                  std::size_t channels, const PyramidSpec& spec,
                                  int runs = 5, std::uint64_t seed = 1);

/// Binary PGM (P5) of a single-channel map, min-max scaled to 0..255.
void write_pgm(std::ostream& out, const Tensor& map);

}  // namespace mono3d
