#pragma once

// A prepared form of a TransformerSpec for bulk evaluation. Weight matrices
// that are mostly zero (selectors, pass-through blocks, merge matrices) are
// stored sparse, and bilinear tensors become lists of their nonzero entries.
// The arithmetic is that of transformer_forward with the zero products left
// out, so results agree with it up to summation order.

#include "transformer.hpp"

namespace a2a {

// Right-multiplication by a fixed matrix: x ↦ x·M. Sparse matrices are kept
// as per-output-column lists of (input column, weight).
class LinearMap {
 public:
  LinearMap() = default;
  explicit LinearMap(const Matrix& m, double max_density = 0.25) : rows_(m.rows()), cols_(m.cols()) {
    empty_ = m.size() == 0;
    if (empty_) return;
    const double density = static_cast<double>((m.array() != 0.0).count()) / static_cast<double>(m.size());
    sparse_ = density <= max_density;
    if (!sparse_) {
      dense_ = m;
      return;
    }
    columns_.resize(static_cast<std::size_t>(cols_));
    for (Index c = 0; c < cols_; ++c)
      for (Index r = 0; r < rows_; ++r)
        if (m(r, c) != 0.0) columns_[static_cast<std::size_t>(c)].push_back({r, m(r, c)});
  }

  bool empty() const { return empty_; }
  Index rows() const { return rows_; }
  Index cols() const { return cols_; }

  Matrix apply(const Matrix& x) const {
    require_dims(x.cols() == rows_, "prepared map: input width differs");
    if (!sparse_) return x * dense_;
    Matrix y(x.rows(), cols_);
    for (Index c = 0; c < cols_; ++c) {
      const auto& entries = columns_[static_cast<std::size_t>(c)];
      if (entries.empty()) {
        y.col(c).setZero();
        continue;
      }
      y.col(c) = entries.front().weight * x.col(entries.front().row);
      for (std::size_t e = 1; e < entries.size(); ++e) y.col(c) += entries[e].weight * x.col(entries[e].row);
    }
    return y;
  }

  void apply_add(const Matrix& x, Matrix& y) const {
    if (empty_) return;
    require_dims(x.cols() == rows_ && y.cols() == cols_, "prepared map: shapes differ");
    if (!sparse_) {
      y.noalias() += x * dense_;
      return;
    }
    for (Index c = 0; c < cols_; ++c)
      for (const auto& e : columns_[static_cast<std::size_t>(c)]) y.col(c) += e.weight * x.col(e.row);
  }

 private:
  struct Entry {
    Index row;
    double weight;
  };
  bool empty_ = true;
  bool sparse_ = false;
  Index rows_ = 0, cols_ = 0;
  Matrix dense_;
  std::vector<std::vector<Entry>> columns_;
};

class PreparedTransformer {
 public:
  explicit PreparedTransformer(TransformerSpec spec) : spec_(std::move(spec)) {
    for (const auto& layer : spec_.layers) layers_.push_back(prepare_layer(layer));
    readout_ = LinearMap(spec_.readout);
  }

  const TransformerSpec& spec() const { return spec_; }

  // Hidden rows after every layer; `on_layer(l, x)` is called with l = 1..L.
  template <class OnLayer>
  TokenMatrix hidden(const Word& tokens, OnLayer&& on_layer) const {
    TokenMatrix x = embed_tokens(spec_, tokens);
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      x = forward_layer(layers_[l], x, x.rows());
      on_layer(l + 1, static_cast<const TokenMatrix&>(x));
    }
    return x;
  }

  TokenMatrix hidden(const Word& tokens) const {
    return hidden(tokens, [](std::size_t, const TokenMatrix&) {});
  }

  TokenMatrix readout(const TokenMatrix& hidden_rows) const { return readout_.apply(hidden_rows); }

  TokenMatrix forward(const Word& tokens) const { return readout(hidden(tokens)); }

  // Readout rows for several inputs with equally many embedded rows, stacked
  // into one matrix so that the row-wise maps run once per batch. Attention
  // is still per input. An input whose query and key rows are bitwise equal
  // to those of the previous input reuses its attention pattern, so inputs
  // sharing a tree shape should be adjacent.
  std::vector<TokenMatrix> forward_batch(const std::vector<Word>& batch) const {
    if (batch.empty()) return {};
    const TokenMatrix first = embed_tokens(spec_, batch.front());
    const Index m = first.rows();
    TokenMatrix x(m * static_cast<Index>(batch.size()), first.cols());
    x.topRows(m) = first;
    for (std::size_t b = 1; b < batch.size(); ++b) {
      const TokenMatrix e = embed_tokens(spec_, batch[b]);
      require_dims(e.rows() == m, "forward_batch: inputs differ in length");
      x.middleRows(static_cast<Index>(b) * m, m) = e;
    }
    for (const auto& layer : layers_) x = forward_layer(layer, x, m);
    const TokenMatrix y = readout_.apply(x);
    std::vector<TokenMatrix> out;
    out.reserve(batch.size());
    for (std::size_t b = 0; b < batch.size(); ++b) out.push_back(y.middleRows(static_cast<Index>(b) * m, m));
    return out;
  }

 private:
  struct Head {
    LinearMap query, key, value;
    AttentionMode mode;
    bool causal;
  };
  struct BilinearEntry {
    Index i, j, k;
    double w;
  };
  struct Stage {
    enum class Kind { identity, mlp, bilinear } kind = Kind::identity;
    LinearMap w1, w2, out, passthrough, left, right;
    Vector b1, b2, bias;
    Activation activation = Activation::square;
    Index out_dim = 0;
    std::vector<BilinearEntry> entries;
  };
  struct Layer {
    std::vector<Head> heads;
    std::vector<LinearMap> merge_blocks;  // one per head
    LinearMap carry;
    bool concat = false;
    Index merged_width = 0;
    std::vector<Stage> stages;
  };

  static Layer prepare_layer(const LayerSpec& spec) {
    Layer layer;
    Index concat = 0;
    for (const auto& h : spec.heads) {
      layer.heads.push_back(
          {LinearMap(h.query), LinearMap(h.key), LinearMap(h.value), h.mode.value_or(spec.mode), h.causal});
      concat += h.value_dim();
    }
    if (spec.merge.size() == 0) {
      layer.concat = true;
      layer.merged_width = concat;
    } else {
      const Index d_in = spec.heads.empty() ? 0 : spec.heads.front().input_dim();
      const bool carry = spec.merge.rows() == concat + d_in && d_in > 0;
      require_dims(carry || spec.merge.rows() == concat, "merge matrix rows match neither heads nor heads + carry");
      Index off = 0;
      for (const auto& h : spec.heads) {
        layer.merge_blocks.emplace_back(spec.merge.middleRows(off, h.value_dim()));
        off += h.value_dim();
      }
      if (carry) layer.carry = LinearMap(spec.merge.bottomRows(d_in));
      layer.merged_width = spec.merge.cols();
    }
    for (const auto& stage : spec.ff.stages) layer.stages.push_back(std::visit(PrepareStage{}, stage));
    return layer;
  }

  struct PrepareStage {
    Stage operator()(const IdentityStage&) const { return {}; }
    Stage operator()(const MlpStage& m) const {
      Stage s;
      s.kind = Stage::Kind::mlp;
      s.w1 = LinearMap(m.mlp.w1);
      s.w2 = LinearMap(m.mlp.w2);
      s.b1 = m.mlp.b1;
      s.b2 = m.mlp.b2;
      s.activation = m.mlp.activation;
      s.out = LinearMap(m.out);
      s.passthrough = LinearMap(m.passthrough);
      return s;
    }
    Stage operator()(const BilinearStage& b) const {
      b.layer.validate();
      Stage s;
      s.kind = Stage::Kind::bilinear;
      s.left = LinearMap(b.select_left);
      s.right = LinearMap(b.select_right);
      s.bias = b.layer.bias;
      s.out_dim = b.layer.out_dim();
      const Tensor3& t = b.layer.tensor;
      for (Index i = 0; i < t.dim(0); ++i)
        for (Index j = 0; j < t.dim(1); ++j)
          for (Index k = 0; k < t.dim(2); ++k)
            if (t(i, j, k) != 0.0) s.entries.push_back({i, j, k, t(i, j, k)});
      s.out = LinearMap(b.out);
      s.passthrough = LinearMap(b.passthrough);
      return s;
    }
  };

  // `x` holds consecutive blocks of m rows, one per input.
  static Matrix head_forward(const Head& h, const Matrix& x, Index m) {
    const Matrix q = h.query.apply(x);
    const Matrix k = h.key.apply(x);
    const Matrix v = h.value.apply(x);
    Matrix out(x.rows(), v.cols());
    Matrix weights;
    std::vector<Index> picks;
    Index cached = -1;
    for (Index r0 = 0; r0 < x.rows(); r0 += m) {
      const bool reuse = cached >= 0 && q.middleRows(r0, m) == q.middleRows(cached, m) &&
                         k.middleRows(r0, m) == k.middleRows(cached, m);
      if (!reuse) {
        Matrix s(m, m);
        s.noalias() = q.middleRows(r0, m) * k.middleRows(r0, m).transpose();
        if (h.causal) detail::apply_causal_mask(s);
        if (h.mode == AttentionMode::soft) {
          weights = detail::softmax_rows(s);
        } else {
          picks = detail::argmax_rows(s);
        }
        cached = r0;
      }
      if (h.mode == AttentionMode::soft) {
        out.middleRows(r0, m).noalias() = weights * v.middleRows(r0, m);
      } else {
        for (Index i = 0; i < m; ++i) out.row(r0 + i) = v.row(r0 + picks[static_cast<std::size_t>(i)]);
      }
    }
    return out;
  }

  static Matrix finish_stage(const Stage& s, const Matrix& z, const Matrix& x) {
    Matrix y = s.out.empty() ? z : s.out.apply(z);
    s.passthrough.apply_add(x, y);
    return y;
  }

  static Matrix stage_forward(const Stage& s, const Matrix& x) {
    switch (s.kind) {
      case Stage::Kind::identity: return x;
      case Stage::Kind::mlp: {
        Matrix h = s.w1.apply(x);
        h.rowwise() += s.b1.transpose();
        const Activation act = s.activation;
        h = h.unaryExpr([act](double v) { return activate(act, v); });
        Matrix z = s.w2.apply(h);
        z.rowwise() += s.b2.transpose();
        return finish_stage(s, z, x);
      }
      case Stage::Kind::bilinear: {
        const Matrix l = s.left.apply(x);
        const Matrix r = s.right.apply(x);
        Matrix z(x.rows(), s.out_dim);
        z.rowwise() = s.bias.transpose();
        for (const auto& e : s.entries) z.col(e.k).array() += e.w * l.col(e.i).array() * r.col(e.j).array();
        return finish_stage(s, z, x);
      }
    }
    return x;
  }

  static Matrix forward_layer(const Layer& layer, const Matrix& x, Index m) {
    Matrix merged;
    if (layer.concat) {
      merged.resize(x.rows(), layer.merged_width);
      Index off = 0;
      for (const auto& h : layer.heads) {
        const Matrix o = head_forward(h, x, m);
        merged.middleCols(off, o.cols()) = o;
        off += o.cols();
      }
    } else {
      merged = Matrix::Zero(x.rows(), layer.merged_width);
      for (std::size_t i = 0; i < layer.heads.size(); ++i)
        layer.merge_blocks[i].apply_add(head_forward(layer.heads[i], x, m), merged);
      layer.carry.apply_add(x, merged);
    }
    Matrix y = std::move(merged);
    for (const auto& s : layer.stages) y = stage_forward(s, y);
    return y;
  }

  TransformerSpec spec_;
  std::vector<Layer> layers_;
  LinearMap readout_;
};

}  // namespace a2a
