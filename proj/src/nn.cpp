#include "mmfgl/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <optional>

#include "mmfgl/error.hpp"
#include "mmfgl/rng.hpp"

namespace mmfgl {

std::size_t ModelSpec::input_total() const {
  std::size_t total = 0;
  for (std::size_t d : in_dims) total += d;
  return total;
}

std::size_t ModelSpec::embedding_dim() const {
  if (arch == Arch::BranchGcn)
    return fusion == Fusion::Concat ? in_dims.size() * hidden : hidden;
  return num_layers >= 2 ? hidden : input_total();
}

void ModelSpec::validate() const {
  if (in_dims.empty()) throw ConfigError("model spec: no modalities");
  for (std::size_t d : in_dims)
    if (d == 0) throw ConfigError("model spec: zero-width modality");
  if (hidden == 0 || out_dim == 0) throw ConfigError("model spec: zero layer width");
  if (num_layers < 1) throw ConfigError("model spec: needs at least one layer");
  if (arch == Arch::BranchGcn && num_layers < 2)
    throw ConfigError("model spec: branch architecture needs a branch layer plus the output layer");
}

namespace {

std::vector<Segment> build_segments(const ModelSpec& spec) {
  spec.validate();
  std::vector<Segment> segs;
  std::size_t offset = 0;
  auto add = [&](std::string name, std::size_t rows, std::size_t cols) {
    segs.push_back({std::move(name), rows, cols, offset});
    offset += rows * cols;
  };

  if (spec.arch == Arch::BranchGcn) {
    const int branch_layers = spec.num_layers - 1;
    for (std::size_t m = 0; m < spec.in_dims.size(); ++m) {
      std::size_t d = spec.in_dims[m];
      for (int l = 0; l < branch_layers; ++l) {
        std::string base = "mod" + std::to_string(m) + ".conv" + std::to_string(l);
        add(base + ".W", d, spec.hidden);
        add(base + ".b", 1, spec.hidden);
        d = spec.hidden;
      }
    }
    add("head.W", spec.embedding_dim(), spec.out_dim);
    add("head.b", 1, spec.out_dim);
  } else {
    std::size_t d = spec.input_total();
    for (int l = 0; l < spec.num_layers; ++l) {
      std::size_t out = l == spec.num_layers - 1 ? spec.out_dim : spec.hidden;
      std::string base = "layer" + std::to_string(l);
      add(base + ".W", d, out);
      add(base + ".b", 1, out);
      d = out;
    }
  }
  if (spec.recon_head) {
    add("recon.W", spec.embedding_dim(), spec.input_total());
    add("recon.b", 1, spec.input_total());
  }
  return segs;
}

bool is_bias(const Segment& s) {
  return s.name.size() >= 2 && s.name.compare(s.name.size() - 2, 2, ".b") == 0;
}

}  // namespace

ParamVector::ParamVector(const ModelSpec& spec) : segments_(build_segments(spec)) {
  std::size_t total = 0;
  for (const auto& s : segments_) total += s.size();
  values_.assign(total, 0.0f);
}

const Segment& ParamVector::seg(const std::string& name) const {
  for (const auto& s : segments_)
    if (s.name == name) return s;
  throw ConfigError("no parameter segment named " + name);
}

ParamVector init_params(const ModelSpec& spec, std::uint64_t seed) {
  ParamVector p(spec);
  Rng rng(derive_seed(seed, "init"));
  for (const auto& s : p.segments()) {
    if (is_bias(s)) continue;  // biases start at zero
    double limit = std::sqrt(6.0 / double(s.rows + s.cols));
    for (std::size_t i = 0; i < s.size(); ++i)
      p.values()[s.offset + i] = float(rng.uniform(-limit, limit));
  }
  return p;
}

std::vector<std::uint8_t> serialize_params(const ParamVector& params) {
  const std::uint64_t count = params.size();
  std::vector<std::uint8_t> bytes(8 + 4 * count);
  std::memcpy(bytes.data(), &count, 8);
  std::memcpy(bytes.data() + 8, params.values().data(), 4 * count);
  return bytes;
}

void deserialize_params(ParamVector& params, const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 8) throw TruncatedPayloadError("parameter payload shorter than its header");
  std::uint64_t count = 0;
  std::memcpy(&count, bytes.data(), 8);
  if (count != params.size())
    throw DimensionMismatchError("parameter payload holds " + std::to_string(count) +
                                 " values, expected " + std::to_string(params.size()));
  if (bytes.size() < 8 + 4 * count)
    throw TruncatedPayloadError("parameter payload cut short");
  if (bytes.size() > 8 + 4 * count)
    throw DimensionMismatchError("parameter payload has trailing bytes");
  std::memcpy(params.values().data(), bytes.data() + 8, 4 * count);
}

Adjacency normalize_adjacency(const MultimodalGraph& graph) {
  const std::size_t n = graph.num_nodes;
  std::vector<std::vector<std::uint32_t>> neigh(n);
  for (const auto& [u, v] : graph.edges) {
    neigh[u].push_back(v);
    neigh[v].push_back(u);
  }
  std::vector<double> inv_sqrt(n);
  for (std::size_t i = 0; i < n; ++i) inv_sqrt[i] = 1.0 / std::sqrt(double(neigh[i].size() + 1));

  Adjacency a;
  a.n = n;
  a.row_ptr.assign(n + 1, 0);
  for (std::size_t u = 0; u < n; ++u) {
    neigh[u].push_back(std::uint32_t(u));  // self-loop
    std::sort(neigh[u].begin(), neigh[u].end());
    a.row_ptr[u + 1] = a.row_ptr[u] + neigh[u].size();
    for (std::uint32_t v : neigh[u]) {
      a.col.push_back(v);
      a.val.push_back(inv_sqrt[u] * inv_sqrt[v]);
    }
  }
  return a;
}

Batch Batch::from_graph(const MultimodalGraph& graph) {
  Batch b;
  b.n = graph.num_nodes;
  b.features = graph.features;
  b.modality_mask = graph.modality_mask;
  b.adj = normalize_adjacency(graph);
  b.labels = graph.labels;
  b.edges = graph.edges;
  for (const auto& [u, v] : graph.edges)
    b.edge_keys.insert((std::uint64_t(u) << 32) | v);
  return b;
}

bool Batch::has_edge(std::uint32_t u, std::uint32_t v) const {
  if (u > v) std::swap(u, v);
  return edge_keys.count((std::uint64_t(u) << 32) | v) != 0;
}

namespace {

template <typename T>
Mat<T> spmm(const Adjacency& a, const Mat<T>& x) {
  Mat<T> y(a.n, x.cols());
  for (std::size_t u = 0; u < a.n; ++u) {
    T* yr = y.row(u);
    for (std::size_t idx = a.row_ptr[u]; idx < a.row_ptr[u + 1]; ++idx) {
      const T w = T(a.val[idx]);
      const T* xr = x.row(a.col[idx]);
      for (std::size_t j = 0; j < x.cols(); ++j) yr[j] += w * xr[j];
    }
  }
  return y;
}

template <typename T>
Mat<T> colsum(const Mat<T>& m) {
  Mat<T> out(1, m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) out(0, j) += m(i, j);
  return out;
}

// The per-instantiation engine: forward caches every intermediate needed by
// the hand-written backward pass.  T is float in training and double inside
// the gradient checker.
template <typename T>
class Engine {
 public:
  Engine(const ModelSpec& spec, const std::vector<Segment>& segs, const T* theta,
         const Batch& batch, const std::vector<std::uint8_t>* hide_rows,
         std::optional<std::size_t> only_modality)
      : spec_(spec), segs_(segs), theta_(theta), batch_(batch), grad_(total_size(segs), T{0}) {
    if (spec.in_dims.size() != batch.features.size())
      throw DimensionMismatchError("model expects " + std::to_string(spec.in_dims.size()) +
                                   " modalities, batch has " +
                                   std::to_string(batch.features.size()));
    for (std::size_t m = 0; m < spec.in_dims.size(); ++m)
      if (batch.features[m].cols() != spec.in_dims[m])
        throw DimensionMismatchError("modality " + std::to_string(m) + " is " +
                                     std::to_string(batch.features[m].cols()) +
                                     " wide, model expects " + std::to_string(spec.in_dims[m]));

    // Inputs are re-masked here so outputs never depend on whatever bytes a
    // masked row happens to hold.
    xm_.reserve(batch.features.size());
    for (std::size_t m = 0; m < batch.features.size(); ++m) {
      Mat<T> x = batch.features[m].template cast<T>();
      for (std::size_t i = 0; i < batch.n; ++i) {
        bool keep = batch.modality_mask(i, m) != 0;
        if (only_modality && *only_modality != m) keep = false;
        if (hide_rows && (*hide_rows)[i]) keep = false;
        if (!keep) std::fill(x.row(i), x.row(i) + x.cols(), T{0});
      }
      xm_.push_back(std::move(x));
    }
  }

  void forward() {
    if (spec_.arch == Arch::BranchGcn) {
      const std::size_t M = xm_.size();
      const int branch_layers = spec_.num_layers - 1;
      stacks_.resize(M);
      for (std::size_t m = 0; m < M; ++m)
        run_stack(stacks_[m], xm_[m], branch_layers, true, true, branch_name(m));
      fuse();
      head_p_ = spmm(batch_.adj, fused_);
      logits_ = affine(head_p_, "head");
    } else {
      const bool use_adj = spec_.arch == Arch::Gcn;
      stacks_.resize(1);
      run_stack(stacks_[0], concat_input(), spec_.num_layers, use_adj, false, plain_name());
    }
  }

  const Mat<T>& logits() const {
    return spec_.arch == Arch::BranchGcn ? logits_ : stacks_[0].h.back();
  }
  const Mat<T>& embeddings() const {
    if (spec_.arch == Arch::BranchGcn) return fused_;
    return stacks_[0].h[stacks_[0].h.size() - 2];
  }
  const Mat<T>& branch_output(std::size_t m) const { return stacks_[m].h.back(); }

  // Backward from any combination of seeds: gradient wrt the logits, wrt the
  // embeddings, and (BranchGcn only) wrt individual branch outputs.
  void backward(const Mat<T>* dlogits, const Mat<T>* demb,
                const std::vector<const Mat<T>*>* dbranch = nullptr) {
    if (spec_.arch == Arch::BranchGcn) {
      Mat<T> dfused(fused_.rows(), fused_.cols());
      if (dlogits) {
        accumulate("head.W", matmul_tn(head_p_, *dlogits));
        accumulate("head.b", colsum(*dlogits));
        dfused = spmm(batch_.adj, matmul_nt(*dlogits, seg_mat("head.W")));
      }
      if (demb) add_into(dfused, *demb);
      std::vector<Mat<T>> dz = unfuse(dfused);
      if (dbranch) {
        for (std::size_t m = 0; m < dz.size(); ++m)
          if ((*dbranch)[m]) add_into(dz[m], *(*dbranch)[m]);
      }
      const int branch_layers = spec_.num_layers - 1;
      for (std::size_t m = 0; m < dz.size(); ++m)
        backward_stack(stacks_[m], std::move(dz[m]), branch_layers, true, true, branch_name(m));
    } else {
      const bool use_adj = spec_.arch == Arch::Gcn;
      const auto name = plain_name();
      const int L = spec_.num_layers;
      Mat<T> dh(embeddings().rows(), embeddings().cols());
      if (dlogits) dh = backward_layer(stacks_[0], *dlogits, L - 1, use_adj, false, name, true);
      if (demb) add_into(dh, *demb);
      backward_stack(stacks_[0], std::move(dh), L - 1, use_adj, false, name);
    }
  }

  // Linear feature-reconstruction head on the embeddings.
  Mat<T> recon_forward() {
    recon_in_ = embeddings();
    return affine_named(recon_in_, "recon.W", "recon.b");
  }
  void recon_backward_head(const Mat<T>& dy, Mat<T>& demb_out) {
    accumulate("recon.W", matmul_tn(recon_in_, dy));
    accumulate("recon.b", colsum(dy));
    demb_out = matmul_nt(dy, seg_mat("recon.W"));
  }

  std::vector<T>& grad() { return grad_; }
  const Batch& batch() const { return batch_; }

 private:
  struct Stack {
    std::vector<Mat<T>> h;  // h[0] = input, h[l+1] = layer l output
    std::vector<Mat<T>> p;  // operand fed to layer l's weight matrix
  };

  static std::size_t total_size(const std::vector<Segment>& segs) {
    std::size_t total = 0;
    for (const auto& s : segs) total += s.size();
    return total;
  }

  const Segment& find_seg(const std::string& name) const {
    for (const auto& s : segs_)
      if (s.name == name) return s;
    throw ConfigError("parameters are missing segment " + name);
  }

  Mat<T> seg_mat(const std::string& name) const {
    const Segment& s = find_seg(name);
    Mat<T> m(s.rows, s.cols);
    for (std::size_t i = 0; i < s.size(); ++i) m.data()[i] = T(theta_[s.offset + i]);
    return m;
  }

  void accumulate(const std::string& name, const Mat<T>& g) {
    const Segment& s = find_seg(name);
    if (g.size() != s.size())
      throw DimensionMismatchError("gradient shape mismatch for segment " + name);
    for (std::size_t i = 0; i < s.size(); ++i) grad_[s.offset + i] += g.data()[i];
  }

  static void add_into(Mat<T>& dst, const Mat<T>& src) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst.data()[i] += src.data()[i];
  }

  auto branch_name(std::size_t m) const {
    return [m](int l) { return "mod" + std::to_string(m) + ".conv" + std::to_string(l); };
  }
  static auto plain_name() {
    return [](int l) { return "layer" + std::to_string(l); };
  }

  Mat<T> concat_input() const {
    Mat<T> x(batch_.n, spec_.input_total());
    std::size_t off = 0;
    for (const auto& f : xm_) {
      for (std::size_t i = 0; i < batch_.n; ++i)
        std::copy(f.row(i), f.row(i) + f.cols(), x.row(i) + off);
      off += f.cols();
    }
    return x;
  }

  Mat<T> affine_named(const Mat<T>& input, const std::string& w, const std::string& b) const {
    Mat<T> z = matmul(input, seg_mat(w));
    const Segment& bias = find_seg(b);
    for (std::size_t i = 0; i < z.rows(); ++i)
      for (std::size_t j = 0; j < z.cols(); ++j) z(i, j) += T(theta_[bias.offset + j]);
    return z;
  }
  Mat<T> affine(const Mat<T>& input, const std::string& base) const {
    return affine_named(input, base + ".W", base + ".b");
  }

  template <typename NameFn>
  void run_stack(Stack& st, Mat<T> input, int layers, bool use_adj, bool relu_all, NameFn name) {
    st.h.clear();
    st.p.clear();
    st.h.push_back(std::move(input));
    for (int l = 0; l < layers; ++l) {
      st.p.push_back(use_adj ? spmm(batch_.adj, st.h.back()) : st.h.back());
      Mat<T> z = affine(st.p.back(), name(l));
      if (relu_all || l < layers - 1)
        for (auto& v : z.data()) v = v > T{0} ? v : T{0};
      st.h.push_back(std::move(z));
    }
  }

  // One layer's backward step; returns the gradient wrt its input when asked.
  template <typename NameFn>
  Mat<T> backward_layer(const Stack& st, const Mat<T>& dout, int l, bool use_adj, bool relu_all,
                        NameFn name, bool need_dinput) {
    Mat<T> dz = dout;
    const bool relued = relu_all || l < int(st.p.size()) - 1;
    if (relued) {
      const Mat<T>& out = st.h[l + 1];
      for (std::size_t i = 0; i < dz.size(); ++i)
        if (out.data()[i] <= T{0}) dz.data()[i] = T{0};
    }
    accumulate(name(l) + ".W", matmul_tn(st.p[l], dz));
    accumulate(name(l) + ".b", colsum(dz));
    if (!need_dinput) return Mat<T>();
    Mat<T> dp = matmul_nt(dz, seg_mat(name(l) + ".W"));
    return use_adj ? spmm(batch_.adj, dp) : std::move(dp);
  }

  // Backward through layers [0, layers) given the gradient at h[layers].
  template <typename NameFn>
  void backward_stack(const Stack& st, Mat<T> dh, int layers, bool use_adj, bool relu_all,
                      NameFn name) {
    for (int l = layers - 1; l >= 0; --l)
      dh = backward_layer(st, dh, l, use_adj, relu_all, name, l > 0);
  }

  void fuse() {
    const std::size_t M = xm_.size();
    const std::size_t h = spec_.hidden;
    if (spec_.fusion == Fusion::Concat) {
      fused_ = Mat<T>(batch_.n, M * h);
      for (std::size_t m = 0; m < M; ++m) {
        const Mat<T>& z = stacks_[m].h.back();
        for (std::size_t i = 0; i < batch_.n; ++i) {
          if (!batch_.modality_mask(i, m)) continue;
          std::copy(z.row(i), z.row(i) + h, fused_.row(i) + m * h);
        }
      }
      return;
    }
    fused_ = Mat<T>(batch_.n, h);
    fuse_cnt_.assign(batch_.n, 0);
    for (std::size_t i = 0; i < batch_.n; ++i) {
      for (std::size_t m = 0; m < M; ++m) {
        if (!batch_.modality_mask(i, m)) continue;
        ++fuse_cnt_[i];
        const T* zr = stacks_[m].h.back().row(i);
        for (std::size_t j = 0; j < h; ++j) fused_(i, j) += zr[j];
      }
      if (fuse_cnt_[i] > 1)
        for (std::size_t j = 0; j < h; ++j) fused_(i, j) /= T(fuse_cnt_[i]);
    }
  }

  std::vector<Mat<T>> unfuse(const Mat<T>& dfused) const {
    const std::size_t M = xm_.size();
    const std::size_t h = spec_.hidden;
    std::vector<Mat<T>> dz(M, Mat<T>(batch_.n, h));
    for (std::size_t i = 0; i < batch_.n; ++i) {
      for (std::size_t m = 0; m < M; ++m) {
        if (!batch_.modality_mask(i, m)) continue;
        if (spec_.fusion == Fusion::Concat) {
          std::copy(dfused.row(i) + m * h, dfused.row(i) + (m + 1) * h, dz[m].row(i));
        } else {
          const T scale = T{1} / T(fuse_cnt_[i]);
          for (std::size_t j = 0; j < h; ++j) dz[m](i, j) = dfused(i, j) * scale;
        }
      }
    }
    return dz;
  }

  const ModelSpec& spec_;
  const std::vector<Segment>& segs_;
  const T* theta_;
  const Batch& batch_;
  std::vector<Mat<T>> xm_;
  std::vector<Stack> stacks_;
  Mat<T> fused_, head_p_, logits_, recon_in_;
  std::vector<int> fuse_cnt_;
  std::vector<T> grad_;
};

// ---- losses, templated so the double path is exact ----

template <typename T>
struct TScalarGrad {
  double loss = 0.0;
  Mat<T> grad;
};

template <typename T>
TScalarGrad<T> ce_t(const Mat<T>& logits, const std::vector<int>& labels,
                    const std::vector<std::uint8_t>& mask) {
  if (mask.size() != logits.rows() || labels.size() != logits.rows())
    throw DimensionMismatchError("cross-entropy inputs disagree on node count");
  std::size_t cnt = 0;
  for (auto m : mask) cnt += m != 0;
  if (cnt == 0) throw ConfigError("cross-entropy over an empty node mask");

  TScalarGrad<T> out;
  out.grad = Mat<T>(logits.rows(), logits.cols());
  double loss = 0.0;
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    if (!mask[i]) continue;
    const int y = labels[i];
    if (y == kUnlabeled || y < 0 || std::size_t(y) >= logits.cols())
      throw StructuralError("masked-in node " + std::to_string(i) + " has no usable label");
    const T* row = logits.row(i);
    T mx = row[0];
    for (std::size_t j = 1; j < logits.cols(); ++j) mx = std::max(mx, row[j]);
    double denom = 0.0;
    for (std::size_t j = 0; j < logits.cols(); ++j) denom += std::exp(double(row[j] - mx));
    loss += std::log(denom) - double(row[y] - mx);
    for (std::size_t j = 0; j < logits.cols(); ++j) {
      double p = std::exp(double(row[j] - mx)) / denom;
      out.grad(i, j) = T((p - (int(j) == y ? 1.0 : 0.0)) / double(cnt));
    }
  }
  out.loss = loss / double(cnt);
  return out;
}

// max(s,0) - s*y + log(1+exp(-|s|)) and its derivative sigmoid(s) - y
inline double stable_bce(double s, double y) {
  return std::max(s, 0.0) - s * y + std::log1p(std::exp(-std::abs(s)));
}
inline double stable_sigmoid(double s) {
  return s >= 0.0 ? 1.0 / (1.0 + std::exp(-s)) : std::exp(s) / (1.0 + std::exp(s));
}

template <typename T>
TScalarGrad<T> link_bce_t(const Mat<T>& z,
                          const std::vector<std::pair<std::uint32_t, std::uint32_t>>& pos,
                          const std::vector<std::pair<std::uint32_t, std::uint32_t>>& neg) {
  if (pos.empty()) throw ConfigError("link objective without positive pairs");
  const double scale = 1.0 / double(pos.size() + neg.size());
  TScalarGrad<T> out;
  out.grad = Mat<T>(z.rows(), z.cols());
  double loss = 0.0;
  auto one = [&](std::uint32_t u, std::uint32_t v, double y) {
    double s = 0.0;
    for (std::size_t j = 0; j < z.cols(); ++j) s += double(z(u, j)) * double(z(v, j));
    loss += stable_bce(s, y);
    const double g = (stable_sigmoid(s) - y) * scale;
    for (std::size_t j = 0; j < z.cols(); ++j) {
      out.grad(u, j) += T(g * double(z(v, j)));
      out.grad(v, j) += T(g * double(z(u, j)));
    }
  };
  for (const auto& [u, v] : pos) one(u, v, 1.0);
  for (const auto& [u, v] : neg) one(u, v, 0.0);
  out.loss = loss * scale;
  return out;
}

template <typename T>
struct TPairGrad {
  double loss = 0.0;
  Mat<T> ga, gb;
};

template <typename T>
TPairGrad<T> info_nce_t(const Mat<T>& za, const Mat<T>& zb, double tau) {
  if (za.rows() != zb.rows() || za.cols() != zb.cols())
    throw DimensionMismatchError("contrastive views differ in shape");
  const std::size_t n = za.rows(), d = za.cols();
  if (n < 2) throw ConfigError("contrastive loss needs at least two rows");
  if (tau <= 0.0) throw ConfigError("contrastive temperature must be positive");

  auto normalize = [&](const Mat<T>& z, std::vector<double>& r) {
    Mat<double> out(n, d);
    r.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j) s += double(z(i, j)) * double(z(i, j));
      r[i] = std::max(std::sqrt(s), 1e-12);
      for (std::size_t j = 0; j < d; ++j) out(i, j) = double(z(i, j)) / r[i];
    }
    return out;
  };
  std::vector<double> ra, rb;
  Mat<double> a = normalize(za, ra), b = normalize(zb, rb);

  Mat<double> s(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double dot = 0.0;
      for (std::size_t k = 0; k < d; ++k) dot += a(i, k) * b(j, k);
      s(i, j) = dot / tau;
    }

  // row direction (a against all b) and column direction (b against all a)
  double loss = 0.0;
  Mat<double> ds(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    double mx = s(i, 0);
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, s(i, j));
    double denom = 0.0;
    for (std::size_t j = 0; j < n; ++j) denom += std::exp(s(i, j) - mx);
    loss += (std::log(denom) + mx - s(i, i)) / (2.0 * n);
    for (std::size_t j = 0; j < n; ++j)
      ds(i, j) += (std::exp(s(i, j) - mx) / denom - (i == j ? 1.0 : 0.0)) / (2.0 * n);
  }
  for (std::size_t j = 0; j < n; ++j) {
    double mx = s(0, j);
    for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, s(i, j));
    double denom = 0.0;
    for (std::size_t i = 0; i < n; ++i) denom += std::exp(s(i, j) - mx);
    loss += (std::log(denom) + mx - s(j, j)) / (2.0 * n);
    for (std::size_t i = 0; i < n; ++i)
      ds(i, j) += (std::exp(s(i, j) - mx) / denom - (i == j ? 1.0 : 0.0)) / (2.0 * n);
  }

  // chain through the normalization: dz = (dn - n (n . dn)) / |z|
  TPairGrad<T> out;
  out.loss = loss;
  out.ga = Mat<T>(n, d);
  out.gb = Mat<T>(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> da(d, 0.0), db(d, 0.0);
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t k = 0; k < d; ++k) {
        da[k] += ds(i, j) * b(j, k) / tau;
        db[k] += ds(j, i) * a(j, k) / tau;
      }
    double dot_a = 0.0, dot_b = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      dot_a += a(i, k) * da[k];
      dot_b += b(i, k) * db[k];
    }
    for (std::size_t k = 0; k < d; ++k) {
      out.ga(i, k) = T((da[k] - a(i, k) * dot_a) / ra[i]);
      out.gb(i, k) = T((db[k] - b(i, k) * dot_b) / rb[i]);
    }
  }
  return out;
}

// ---- end-to-end objectives ----

template <typename T>
struct TGrad {
  double loss = 0.0;
  std::vector<T> grad;
};

template <typename T>
Mat<T> recon_target(const Batch& batch, const ModelSpec& spec) {
  Mat<T> x(batch.n, spec.input_total());
  std::size_t off = 0;
  for (std::size_t m = 0; m < batch.features.size(); ++m) {
    const auto& f = batch.features[m];
    for (std::size_t i = 0; i < batch.n; ++i) {
      if (!batch.modality_mask(i, m)) continue;
      for (std::size_t j = 0; j < f.cols(); ++j) x(i, off + j) = T(f(i, j));
    }
    off += f.cols();
  }
  return x;
}

template <typename T>
TGrad<T> run_objective(const ModelSpec& spec, const std::vector<Segment>& segs, const T* theta,
                       const Batch& batch, const ObjectiveConfig& cfg) {
  using Kind = ObjectiveConfig::Kind;

  if (cfg.kind == Kind::Classification) {
    Engine<T> e(spec, segs, theta, batch, nullptr, std::nullopt);
    e.forward();
    auto ce = ce_t(e.logits(), batch.labels, cfg.mask);
    e.backward(&ce.grad, nullptr);
    return {ce.loss, std::move(e.grad())};
  }

  if (cfg.kind == Kind::LinkPrediction) {
    if (batch.edges.empty()) throw ConfigError("link objective on an edgeless batch");
    Engine<T> e(spec, segs, theta, batch, nullptr, std::nullopt);
    e.forward();
    // negatives: uniform non-edges, as many as there are positives
    std::vector<std::pair<std::uint32_t, std::uint32_t>> neg;
    Rng rng(cfg.seed);
    std::size_t attempts = 0;
    const std::size_t cap = 1000 * batch.edges.size();
    while (neg.size() < batch.edges.size() && attempts++ < cap) {
      auto u = std::uint32_t(rng.uniform_int(batch.n));
      auto v = std::uint32_t(rng.uniform_int(batch.n));
      if (u == v || batch.has_edge(u, v)) continue;
      neg.emplace_back(std::min(u, v), std::max(u, v));
    }
    auto bce = link_bce_t(e.embeddings(), batch.edges, neg);
    e.backward(nullptr, &bce.grad);
    return {bce.loss, std::move(e.grad())};
  }

  if (cfg.kind == Kind::Reconstruction) {
    if (!spec.recon_head) throw ConfigError("reconstruction objective needs recon_head");
    if (cfg.mask_fraction <= 0.0 || cfg.mask_fraction >= 1.0)
      throw ConfigError("reconstruction mask fraction outside (0,1)");
    if (batch.n == 0) throw ConfigError("reconstruction on an empty batch");
    const auto count =
        std::max<std::size_t>(1, std::size_t(std::lround(cfg.mask_fraction * double(batch.n))));
    std::vector<std::uint8_t> hidden(batch.n, 0);
    for (auto r : Rng(cfg.seed).sample_without_replacement(batch.n, count)) hidden[r] = 1;

    Engine<T> e(spec, segs, theta, batch, &hidden, std::nullopt);
    e.forward();
    Mat<T> y = e.recon_forward();
    Mat<T> target = recon_target<T>(batch, spec);

    const std::size_t dim = y.cols();
    double loss = 0.0;
    Mat<T> dy(y.rows(), y.cols());
    const double scale = 1.0 / (double(count) * double(dim));
    for (std::size_t i = 0; i < batch.n; ++i) {
      if (!hidden[i]) continue;
      for (std::size_t j = 0; j < dim; ++j) {
        const double diff = double(y(i, j)) - double(target(i, j));
        loss += diff * diff * scale;
        dy(i, j) = T(2.0 * diff * scale);
      }
    }
    Mat<T> demb;
    e.recon_backward_head(dy, demb);
    e.backward(nullptr, &demb);
    return {loss, std::move(e.grad())};
  }

  if (cfg.kind == Kind::PrototypeAlignment) {
    if (cfg.mask.size() != batch.n)
      throw DimensionMismatchError("alignment mask does not cover the batch");
    if (cfg.anchors.cols() != spec.embedding_dim())
      throw DimensionMismatchError("anchor width " + std::to_string(cfg.anchors.cols()) +
                                   " does not match embedding width " +
                                   std::to_string(spec.embedding_dim()));
    std::size_t cnt = 0;
    for (auto m : cfg.mask) cnt += m != 0;
    if (cnt == 0) throw ConfigError("alignment over an empty node mask");

    Engine<T> e(spec, segs, theta, batch, nullptr, std::nullopt);
    e.forward();
    const Mat<T>& emb = e.embeddings();
    Mat<T> demb(emb.rows(), emb.cols());
    double loss = 0.0;
    const double scale = cfg.strength / double(cnt);
    for (std::size_t i = 0; i < batch.n; ++i) {
      if (!cfg.mask[i]) continue;
      const int y = batch.labels[i];
      if (y == kUnlabeled || y < 0 || std::size_t(y) >= cfg.anchors.rows())
        throw StructuralError("masked-in node " + std::to_string(i) + " has no anchor row");
      for (std::size_t j = 0; j < emb.cols(); ++j) {
        const double diff = double(emb(i, j)) - double(cfg.anchors(y, j));
        loss += diff * diff * scale;
        demb(i, j) = T(2.0 * diff * scale);
      }
    }
    e.backward(nullptr, &demb);
    return {loss, std::move(e.grad())};
  }

  // Contrastive: two modality views of the same nodes, restricted to nodes
  // where both are present.
  const std::size_t M = batch.features.size();
  if (cfg.mod_a >= M || cfg.mod_b >= M || cfg.mod_a == cfg.mod_b)
    throw ConfigError("contrastive objective needs two distinct valid modalities");
  std::vector<std::uint32_t> rows;
  for (std::size_t i = 0; i < batch.n; ++i)
    if (batch.modality_mask(i, cfg.mod_a) && batch.modality_mask(i, cfg.mod_b))
      rows.push_back(std::uint32_t(i));
  if (rows.size() < 2)
    throw ConfigError("contrastive objective needs at least two nodes with both modalities");

  auto compact = [&](const Mat<T>& z) {
    Mat<T> out(rows.size(), z.cols());
    for (std::size_t r = 0; r < rows.size(); ++r)
      std::copy(z.row(rows[r]), z.row(rows[r]) + z.cols(), out.row(r));
    return out;
  };
  auto scatter = [&](const Mat<T>& g, std::size_t n_rows) {
    Mat<T> out(n_rows, g.cols());
    for (std::size_t r = 0; r < rows.size(); ++r)
      std::copy(g.row(r), g.row(r) + g.cols(), out.row(rows[r]));
    return out;
  };

  if (spec.arch == Arch::BranchGcn) {
    Engine<T> e(spec, segs, theta, batch, nullptr, std::nullopt);
    e.forward();
    auto nce = info_nce_t(compact(e.branch_output(cfg.mod_a)),
                          compact(e.branch_output(cfg.mod_b)), cfg.temperature);
    Mat<T> da = scatter(nce.ga, batch.n), db = scatter(nce.gb, batch.n);
    std::vector<const Mat<T>*> dbranch(M, nullptr);
    dbranch[cfg.mod_a] = &da;
    dbranch[cfg.mod_b] = &db;
    e.backward(nullptr, nullptr, &dbranch);
    return {nce.loss, std::move(e.grad())};
  }

  // Mlp/Gcn: one forward per view, each seeing a single modality's features.
  Engine<T> ea(spec, segs, theta, batch, nullptr, cfg.mod_a);
  Engine<T> eb(spec, segs, theta, batch, nullptr, cfg.mod_b);
  ea.forward();
  eb.forward();
  auto nce = info_nce_t(compact(ea.embeddings()), compact(eb.embeddings()), cfg.temperature);
  Mat<T> da = scatter(nce.ga, batch.n), db = scatter(nce.gb, batch.n);
  ea.backward(nullptr, &da);
  eb.backward(nullptr, &db);
  TGrad<T> out{nce.loss, std::move(ea.grad())};
  for (std::size_t i = 0; i < out.grad.size(); ++i) out.grad[i] += eb.grad()[i];
  return out;
}

}  // namespace

ForwardResult forward(const ModelSpec& spec, const ParamVector& params, const Batch& batch) {
  Engine<float> e(spec, params.segments(), params.values().data(), batch, nullptr, std::nullopt);
  e.forward();
  return {e.logits(), e.embeddings()};
}

ScalarGrad softmax_cross_entropy(const Mat<float>& logits, const std::vector<int>& labels,
                                 const std::vector<std::uint8_t>& mask) {
  auto r = ce_t(logits, labels, mask);
  return {r.loss, std::move(r.grad)};
}

ScalarGrad link_bce(const Mat<float>& z,
                    const std::vector<std::pair<std::uint32_t, std::uint32_t>>& pos,
                    const std::vector<std::pair<std::uint32_t, std::uint32_t>>& neg) {
  auto r = link_bce_t(z, pos, neg);
  return {r.loss, std::move(r.grad)};
}

PairGrad info_nce(const Mat<float>& z_a, const Mat<float>& z_b, double temperature) {
  auto r = info_nce_t(z_a, z_b, temperature);
  return {r.loss, std::move(r.ga), std::move(r.gb)};
}

GradResult objective_grad(const ModelSpec& spec, const ParamVector& params, const Batch& batch,
                          const ObjectiveConfig& objective) {
  auto r = run_objective<float>(spec, params.segments(), params.values().data(), batch, objective);
  return {r.loss, std::move(r.grad)};
}

PrototypeResult class_prototypes(const ModelSpec& spec, const ParamVector& params,
                                 const Batch& batch, const std::vector<std::uint8_t>& mask,
                                 int num_classes) {
  if (mask.size() != batch.n)
    throw DimensionMismatchError("prototype mask does not cover the batch");
  if (num_classes <= 0) throw ConfigError("prototypes need a positive class count");

  Engine<float> e(spec, params.segments(), params.values().data(), batch, nullptr, std::nullopt);
  e.forward();
  const Mat<float>& emb = e.embeddings();

  PrototypeResult out;
  out.prototypes = Mat<float>(std::size_t(num_classes), emb.cols());
  out.counts.assign(std::size_t(num_classes), 0);
  std::vector<std::vector<double>> acc(std::size_t(num_classes),
                                       std::vector<double>(emb.cols(), 0.0));
  for (std::size_t i = 0; i < batch.n; ++i) {
    if (!mask[i]) continue;
    const int y = batch.labels[i];
    if (y == kUnlabeled || y < 0 || y >= num_classes)
      throw StructuralError("masked-in node " + std::to_string(i) + " has no usable label");
    ++out.counts[y];
    for (std::size_t j = 0; j < emb.cols(); ++j) acc[y][j] += double(emb(i, j));
  }
  for (int c = 0; c < num_classes; ++c) {
    if (out.counts[c] == 0) continue;
    for (std::size_t j = 0; j < emb.cols(); ++j)
      out.prototypes(c, j) = float(acc[c][j] / double(out.counts[c]));
  }
  return out;
}

double grad_check(const ModelSpec& spec, const Batch& batch, const ObjectiveConfig& objective,
                  std::uint64_t seed) {
  ParamVector p = init_params(spec, seed);
  std::vector<double> theta(p.values().begin(), p.values().end());
  const auto& segs = p.segments();

  auto analytic = run_objective<double>(spec, segs, theta.data(), batch, objective);
  const std::size_t total = theta.size();
  const auto sample =
      std::max<std::size_t>(1, std::size_t(std::lround(0.05 * double(total))));
  auto coords = Rng(derive_seed(seed, "coords")).sample_without_replacement(total, sample);

  const double step = 1e-3;
  double worst = 0.0;
  for (auto c : coords) {
    const double orig = theta[c];
    theta[c] = orig + step;
    const double up = run_objective<double>(spec, segs, theta.data(), batch, objective).loss;
    theta[c] = orig - step;
    const double down = run_objective<double>(spec, segs, theta.data(), batch, objective).loss;
    theta[c] = orig;
    const double numeric = (up - down) / (2.0 * step);
    const double a = analytic.grad[c];
    const double rel = std::abs(a - numeric) / std::max({1e-6, std::abs(a), std::abs(numeric)});
    worst = std::max(worst, rel);
  }
  return worst;
}

namespace {

void check_gradient_usable(const ParamVector& params, const std::vector<float>& grad) {
  if (grad.size() != params.size())
    throw DimensionMismatchError("gradient length " + std::to_string(grad.size()) +
                                 " does not match parameter count " +
                                 std::to_string(params.size()));
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (std::isfinite(grad[i])) continue;
    for (const auto& s : params.segments())
      if (i >= s.offset && i < s.offset + s.size())
        throw NumericError("non-finite gradient in segment " + s.name + " at local index " +
                           std::to_string(i - s.offset));
    throw NumericError("non-finite gradient at index " + std::to_string(i));
  }
}

}  // namespace

void sgd_step(ParamVector& params, const std::vector<float>& grad, const OptimConfig& config) {
  check_gradient_usable(params, grad);
  auto& w = params.values();
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double g = double(grad[i]) + config.weight_decay * double(w[i]);
    w[i] = float(double(w[i]) - config.lr * g);
  }
}

void adam_step(ParamVector& params, const std::vector<float>& grad, const OptimConfig& config,
               AdamState& state) {
  check_gradient_usable(params, grad);
  auto& w = params.values();
  if (state.m.empty()) {
    state.m.assign(w.size(), 0.0f);
    state.v.assign(w.size(), 0.0f);
  }
  if (state.m.size() != w.size())
    throw DimensionMismatchError("optimizer state does not match parameter count");
  state.t += 1;
  const double bc1 = 1.0 - std::pow(config.beta1, double(state.t));
  const double bc2 = 1.0 - std::pow(config.beta2, double(state.t));
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double g = double(grad[i]) + config.weight_decay * double(w[i]);
    const double m = config.beta1 * double(state.m[i]) + (1.0 - config.beta1) * g;
    const double v = config.beta2 * double(state.v[i]) + (1.0 - config.beta2) * g * g;
    state.m[i] = float(m);
    state.v[i] = float(v);
    w[i] = float(double(w[i]) - config.lr * (m / bc1) / (std::sqrt(v / bc2) + config.eps));
  }
}

}  // namespace mmfgl
