#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "rmo/error.hpp"
#include "rmo/manifold.hpp"
#include "rmo/matrix.hpp"
#include "rmo/random.hpp"

namespace rmo {

/// Samples as rows of `x`. Labels are empty for unsupervised data.
struct Dataset {
  Matrix x;
  std::vector<int> labels;
  std::size_t classes = 0;
  std::string provenance;
  Matrix planted;  // generating basis of synthetic data, empty otherwise

  std::size_t size() const noexcept { return x.rows(); }
  std::size_t dim() const noexcept { return x.cols(); }

  /// Rows `idx` of this dataset, labels included.
  Dataset subset(const std::vector<std::size_t>& idx) const {
    Dataset out;
    out.x = Matrix(idx.size(), dim());
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t j = 0; j < dim(); ++j) out.x(r, j) = x(idx[r], j);
    if (!labels.empty()) {
      out.labels.reserve(idx.size());
      for (std::size_t i : idx) out.labels.push_back(labels[i]);
    }
    out.classes = classes;
    out.provenance = provenance;
    return out;
  }
};

struct LossGrad {
  double loss = 0.0;
  Matrix egrad;
};

enum class TaskKind { Pca, Classifier };

inline std::string to_string(TaskKind k) { return k == TaskKind::Pca ? "pca" : "classifier"; }

/// Reconstruction loss (1/n) sum_i ||x_i - W W^T x_i||^2. The gradient is
/// -(2/n) X^T X W, the form valid on the constraint set W^T W = I.
inline LossGrad pca_loss_grad(const ManifoldPoint& at, const Dataset& batch) {
  if (batch.size() == 0) throw ConfigError("pca_loss_grad: empty batch");
  if (batch.dim() != at.kind.d) {
    throw ConfigError("pca_loss_grad: samples have " + std::to_string(batch.dim()) +
                      " features, manifold has d = " + std::to_string(at.kind.d));
  }
  const double n = static_cast<double>(batch.size());
  const Matrix xw = matmul(batch.x, at.w);            // n x p
  const Matrix resid = batch.x - matmul_nt(xw, at.w);  // n x d
  LossGrad out;
  double s = 0.0;
  for (double v : resid.data()) s += v * v;
  out.loss = s / n;
  out.egrad = matmul_tn(batch.x, xw);
  out.egrad *= -2.0 / n;
  return out;
}

/// Mean softmax cross-entropy of logits W^T x_i.
inline LossGrad classifier_loss_grad(const ManifoldPoint& at, const Dataset& batch) {
  if (batch.size() == 0) throw ConfigError("classifier_loss_grad: empty batch");
  if (batch.dim() != at.kind.d) {
    throw ConfigError("classifier_loss_grad: samples have " + std::to_string(batch.dim()) +
                      " features, manifold has d = " + std::to_string(at.kind.d));
  }
  if (batch.labels.size() != batch.size()) {
    throw DataError("classifier_loss_grad: " + std::to_string(batch.labels.size()) +
                    " labels for " + std::to_string(batch.size()) + " samples");
  }
  const std::size_t k = at.kind.p;
  const double n = static_cast<double>(batch.size());
  Matrix z = matmul(batch.x, at.w);  // n x K
  double total = 0.0;
  for (std::size_t i = 0; i < z.rows(); ++i) {
    const int y = batch.labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= k) {
      throw DataError("classifier_loss_grad: label " + std::to_string(y) + " at sample " +
                      std::to_string(i) + " outside [0, " + std::to_string(k) + ")");
    }
    double mx = z(i, 0);
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, z(i, j));
    double denom = 0.0;
    for (std::size_t j = 0; j < k; ++j) denom += std::exp(z(i, j) - mx);
    const double lse = mx + std::log(denom);
    total += lse - z(i, static_cast<std::size_t>(y));
    for (std::size_t j = 0; j < k; ++j) z(i, j) = std::exp(z(i, j) - lse);
    z(i, static_cast<std::size_t>(y)) -= 1.0;
  }
  LossGrad out;
  out.loss = total / n;
  out.egrad = matmul_tn(batch.x, z);
  out.egrad *= 1.0 / n;
  return out;
}

inline LossGrad task_loss_grad(TaskKind kind, const ManifoldPoint& at, const Dataset& batch) {
  return kind == TaskKind::Pca ? pca_loss_grad(at, batch) : classifier_loss_grad(at, batch);
}

/// x_i = U z_i + noise * e_i with U a random d x p_true orthonormal basis.
inline Dataset synth_subspace(std::size_t d, std::size_t p_true, std::size_t n, double noise,
                              std::uint64_t seed) {
  if (p_true > d || p_true < 1) {
    throw ConfigError("synth_subspace: need 1 <= p_true <= d, got p_true = " +
                      std::to_string(p_true) + ", d = " + std::to_string(d));
  }
  Dataset out;
  out.planted = random_point(ManifoldKind::stiefel(d, p_true), seed).w;
  Rng rng(seed ^ 0x5bd1e995ULL);
  const Matrix z = rng.normal_matrix(n, p_true);
  out.x = matmul_nt(z, out.planted);
  for (double& v : out.x.data()) v += noise * rng.normal();
  out.provenance = "synthetic-subspace seed=" + std::to_string(seed);
  return out;
}

/// Features scale * N(0, I); label = argmax of W*^T x for a planted
/// orthonormal W*, then a `label_noise` fraction replaced by another class.
inline Dataset synth_classifier(std::size_t d, std::size_t classes, std::size_t n, double scale,
                                double label_noise, std::uint64_t seed) {
  if (classes < 2 || classes > d) {
    throw ConfigError("synth_classifier: need 2 <= classes <= d");
  }
  Dataset out;
  out.planted = random_point(ManifoldKind::stiefel(d, classes), seed).w;
  out.classes = classes;
  Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);
  out.x = rng.normal_matrix(n, d);
  out.x *= scale;
  const Matrix z = matmul(out.x, out.planted);
  out.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < classes; ++j)
      if (z(i, j) > z(i, best)) best = j;
    out.labels[i] = static_cast<int>(best);
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (rng.uniform() < label_noise) {
      const std::size_t shift = 1 + rng.index(classes - 1);
      out.labels[i] = static_cast<int>((static_cast<std::size_t>(out.labels[i]) + shift) % classes);
    }
  }
  out.provenance = "synthetic-classifier seed=" + std::to_string(seed);
  return out;
}

/// Contents of one IDX file: an image tensor flattened to rows, or labels.
struct IdxData {
  enum class Kind { Images, Labels } kind = Kind::Images;
  Matrix images;  // n x (rows * cols), scaled to [0, 1]
  std::vector<int> labels;
  std::size_t image_rows = 0;
  std::size_t image_cols = 0;
  std::string digest;  // FNV-1a 64 of the raw bytes, hex
};

namespace detail {
inline std::string fnv1a_hex(const std::vector<unsigned char>& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}
}  // namespace detail

/// Parses a big-endian IDX byte string with unsigned-byte payload.
inline IdxData parse_idx(const std::vector<unsigned char>& bytes) {
  auto read_u32 = [&bytes](std::size_t off) -> std::uint32_t {
    if (off + 4 > bytes.size()) {
      throw ParseError("truncated header at offset " + std::to_string(off), off);
    }
    return (std::uint32_t{bytes[off]} << 24) | (std::uint32_t{bytes[off + 1]} << 16) |
           (std::uint32_t{bytes[off + 2]} << 8) | std::uint32_t{bytes[off + 3]};
  };
  const std::uint32_t magic = read_u32(0);
  std::size_t ndims = 0;
  IdxData out;
  if (magic == 0x00000803) {
    ndims = 3;
    out.kind = IdxData::Kind::Images;
  } else if (magic == 0x00000801) {
    ndims = 1;
    out.kind = IdxData::Kind::Labels;
  } else {
    throw ParseError("unsupported magic at offset 0", 0);
  }
  std::vector<std::size_t> dims(ndims);
  std::size_t count = 1;
  for (std::size_t k = 0; k < ndims; ++k) {
    const std::size_t off = 4 + 4 * k;
    dims[k] = read_u32(off);
    if (dims[k] != 0 && count > SIZE_MAX / dims[k]) {
      throw ParseError("dimension overflow at offset " + std::to_string(off), off);
    }
    count *= dims[k];
  }
  const std::size_t payload = 4 + 4 * ndims;
  if (bytes.size() - payload < count) {
    throw ParseError("truncated payload at offset " + std::to_string(bytes.size()) + ": expected " +
                         std::to_string(count) + " bytes from offset " + std::to_string(payload),
                     bytes.size());
  }
  if (out.kind == IdxData::Kind::Images) {
    out.image_rows = dims[1];
    out.image_cols = dims[2];
    const std::size_t feat = dims[1] * dims[2];
    out.images = Matrix(dims[0], feat);
    auto data = out.images.data();
    for (std::size_t i = 0; i < count; ++i) data[i] = bytes[payload + i] / 255.0;
  } else {
    out.labels.resize(count);
    for (std::size_t i = 0; i < count; ++i) out.labels[i] = bytes[payload + i];
  }
  out.digest = detail::fnv1a_hex(bytes);
  return out;
}

inline IdxData load_idx(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("load_idx: cannot open " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  return parse_idx(bytes);
}

/// Image file plus optional label file as a Dataset.
inline Dataset load_idx_dataset(const std::string& images_path, const std::string& labels_path = {}) {
  IdxData img = load_idx(images_path);
  if (img.kind != IdxData::Kind::Images) throw DataError(images_path + " holds labels, not images");
  Dataset out;
  out.x = std::move(img.images);
  out.provenance = "idx fnv1a=" + img.digest;
  if (!labels_path.empty()) {
    IdxData lab = load_idx(labels_path);
    if (lab.kind != IdxData::Kind::Labels) throw DataError(labels_path + " holds images, not labels");
    if (lab.labels.size() != out.x.rows()) {
      throw DataError("label count " + std::to_string(lab.labels.size()) + " != image count " +
                      std::to_string(out.x.rows()));
    }
    out.labels = std::move(lab.labels);
    int mx = 0;
    for (int y : out.labels) mx = std::max(mx, y);
    out.classes = static_cast<std::size_t>(mx) + 1;
  }
  return out;
}

}  // namespace rmo
