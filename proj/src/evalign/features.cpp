// Copyright 2026 The viewmatch Authors
// SPDX-License-Identifier: Apache-2.0

#include "viewmatch/evalign/features.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "viewmatch/common/parallel.hpp"

namespace viewmatch::evalign {

using fieldmodels::ModelKind;

std::string to_string(Tap t) {
  switch (t) {
    case Tap::Latents: return "latents";
    case Tap::FieldWeights: return "field_weights";
    case Tap::Penultimate: return "penultimate";
    case Tap::Embedding: return "embedding";
  }
  return "unknown";
}

Tap tap_from_string(const std::string& s) {
  for (auto t : {Tap::Latents, Tap::FieldWeights, Tap::Penultimate, Tap::Embedding}) {
    if (to_string(t) == s) return t;
  }
  throw EvalError("unknown tap '" + s + "' (expected latents, field_weights, penultimate or embedding)");
}

bool tap_valid(ModelKind kind, Tap tap) {
  switch (tap) {
    case Tap::Latents: return kind != ModelKind::Zoo;
    case Tap::FieldWeights: return kind == ModelKind::Lfn;
    case Tap::Penultimate: return kind == ModelKind::Zoo || kind == ModelKind::Contrastive;
    case Tap::Embedding: return kind == ModelKind::Contrastive;
  }
  return false;
}

std::size_t FeatureMatrix::row_of(const ViewKey& key) const {
  const auto it = index_.find(key);
  if (it == index_.end()) {
    throw EvalError("no feature row for " + key.object_id + " view " + std::to_string(key.view_index));
  }
  return it->second;
}

bool FeatureMatrix::contains(const ViewKey& key) const { return index_.count(key) > 0; }

void FeatureMatrix::reindex() {
  index_.clear();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (!index_.emplace(rows[i], i).second) {
      throw EvalError("duplicate feature row " + rows[i].object_id + " view " + std::to_string(rows[i].view_index));
    }
  }
}

void FeatureMatrix::validate() const {
  if (static_cast<std::size_t>(values.rows()) != rows.size()) throw EvalError("feature matrix row count mismatch");
  if (index_.size() != rows.size()) throw EvalError("feature matrix index is stale or has duplicate keys");
  if (!values.allFinite()) throw EvalError("feature matrix (" + to_string(tap) + ") has non-finite values");
}

FeatureMatrix make_feature_matrix(Tap tap, std::vector<ViewKey> rows, Eigen::MatrixXd values) {
  FeatureMatrix f;
  f.tap = tap;
  f.rows = std::move(rows);
  f.values = std::move(values);
  f.reindex();
  f.validate();
  return f;
}

trainer::TrainingData limit_views(const trainer::TrainingData& data, int views_per_object) {
  if (views_per_object <= 0) return data;
  trainer::TrainingData out = data;
  for (auto& o : out.objects) {
    const auto n = std::min(o.images.size(), static_cast<std::size_t>(views_per_object));
    o.images.resize(n);
    o.poses.resize(n);
    o.view_indices.resize(n);
  }
  return out;
}

FeatureMatrix extract_features(const fieldmodels::ModelConfig& model, const diffcore::ParameterSet<float>& params,
                               const trainer::TrainingData& data, Tap tap, int workers) {
  if (!tap_valid(model.kind, tap)) {
    throw EvalError("tap " + to_string(tap) + " is not available for model kind " + to_string(model.kind));
  }
  std::vector<std::pair<int, int>> refs;
  std::vector<ViewKey> keys;
  for (std::size_t o = 0; o < data.objects.size(); ++o) {
    const auto& obj = data.objects[o];
    for (std::size_t v = 0; v < obj.images.size(); ++v) {
      refs.emplace_back(static_cast<int>(o), static_cast<int>(v));
      keys.push_back({obj.object_id, obj.view_indices.empty() ? static_cast<int>(v) : obj.view_indices[v]});
    }
  }
  if (refs.empty()) throw EvalError("extract_features: no views");
  if (data.intrinsics.width != model.encoder.image_size || data.intrinsics.height != model.encoder.image_size) {
    throw EvalError("extract_features: model expects " + std::to_string(model.encoder.image_size) + " px images");
  }
  constexpr std::size_t kChunk = 32;
  const std::size_t chunks = (refs.size() + kChunk - 1) / kChunk;
  std::vector<Eigen::MatrixXd> parts(chunks);
  parallel_for(chunks, workers, [&](std::size_t c) {
    const auto begin = refs.begin() + static_cast<std::ptrdiff_t>(c * kChunk);
    const auto end = refs.begin() + static_cast<std::ptrdiff_t>(std::min(refs.size(), (c + 1) * kChunk));
    const std::vector<std::pair<int, int>> part(begin, end);
    diffcore::Tape<float> tape;
    diffcore::Binding<float> bind(tape, params, false);
    const auto images = tape.constant(trainer::image_batch(data, part, model.encoder.image_channels));
    diffcore::Var<float> out;
    switch (tap) {
      case Tap::Latents: out = fieldmodels::encode(model, bind, images); break;
      case Tap::FieldWeights:
        out = fieldmodels::flatten_field_weights(fieldmodels::hypernet_map(model, bind, fieldmodels::encode(model, bind, images)));
        break;
      case Tap::Penultimate:
        out = model.kind == ModelKind::Zoo ? fieldmodels::zoo_forward(model, bind, images).penultimate
                                           : diffcore::relu(fieldmodels::encode(model, bind, images));
        break;
      case Tap::Embedding:
        out = fieldmodels::contrastive_embed(model, bind, fieldmodels::encode(model, bind, images));
        break;
    }
    const auto& v = out.value();
    const Eigen::Index rows = v.dim(0);
    const std::size_t cols = v.size() / static_cast<std::size_t>(rows);
    Eigen::MatrixXd m(rows, static_cast<Eigen::Index>(cols));
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (std::size_t k = 0; k < cols; ++k) m(r, static_cast<Eigen::Index>(k)) = v.data()[static_cast<std::size_t>(r) * cols + k];
    }
    parts[c] = std::move(m);
  });
  Eigen::MatrixXd values(static_cast<Eigen::Index>(refs.size()), parts[0].cols());
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    values.middleRows(at, p.rows()) = p;
    at += p.rows();
  }
  return make_feature_matrix(tap, std::move(keys), std::move(values));
}

Eigen::MatrixXd PcaModel::project(const Eigen::MatrixXd& x) const {
  if (x.cols() != mean.size()) throw EvalError("pca: feature width does not match the fitted model");
  return (x.rowwise() - mean) * components;
}

namespace {

// Orthonormal completion: appends standard basis directions, orthogonalized
// against the existing columns, until `comp` has k columns.
void complete_basis(Eigen::MatrixXd& comp, Eigen::Index filled, Eigen::Index k) {
  const Eigen::Index d = comp.rows();
  for (Eigen::Index j = 0; j < d && filled < k; ++j) {
    Eigen::VectorXd v = Eigen::VectorXd::Unit(d, j);
    for (int pass = 0; pass < 2; ++pass) {
      for (Eigen::Index c = 0; c < filled; ++c) v -= comp.col(c).dot(v) * comp.col(c);
    }
    const double n = v.norm();
    if (n > 1e-6) comp.col(filled++) = v / n;
  }
}

}  // namespace

PcaModel fit_pca(const Eigen::MatrixXd& x, int k) {
  const Eigen::Index n = x.rows(), d = x.cols();
  if (k < 1 || k > std::min(n, d)) {
    throw EvalError("pca: k = " + std::to_string(k) + " must lie in [1, min(rows, cols)] = [1, " +
                    std::to_string(std::min(n, d)) + "]");
  }
  if (!x.allFinite()) throw EvalError("pca: non-finite input");
  PcaModel pca;
  pca.mean = x.colwise().mean();
  const Eigen::MatrixXd xc = x.rowwise() - pca.mean;
  const double denom = n > 1 ? static_cast<double>(n - 1) : 1.0;
  pca.components = Eigen::MatrixXd::Zero(d, k);
  pca.variances = Eigen::VectorXd::Zero(k);
  Eigen::Index filled = 0;
  if (n >= d) {
    const Eigen::MatrixXd cov = (xc.transpose() * xc) / denom;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    if (es.info() != Eigen::Success) throw EvalError("pca: eigendecomposition failed");
    for (Eigen::Index c = 0; c < k; ++c) {
      pca.components.col(c) = es.eigenvectors().col(d - 1 - c);
      pca.variances(c) = std::max(0.0, es.eigenvalues()(d - 1 - c));
    }
    filled = k;
  } else {
    // Gram route: if G u = l u with G = Xc Xc^T then Xc^T u / sqrt(l) is a
    // unit eigenvector of Xc^T Xc with the same eigenvalue.
    const Eigen::MatrixXd gram = xc * xc.transpose();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram);
    if (es.info() != Eigen::Success) throw EvalError("pca: eigendecomposition failed");
    const double top = std::max(es.eigenvalues()(n - 1), 0.0);
    for (Eigen::Index c = 0; c < k; ++c) {
      const double l = es.eigenvalues()(n - 1 - c);
      if (!(l > 1e-12 * std::max(top, 1e-300))) break;
      pca.components.col(c) = xc.transpose() * es.eigenvectors().col(n - 1 - c) / std::sqrt(l);
      pca.variances(c) = l / denom;
      filled = c + 1;
    }
    complete_basis(pca.components, filled, k);
  }
  for (Eigen::Index c = 0; c < k; ++c) {
    Eigen::Index arg = 0;
    pca.components.col(c).cwiseAbs().maxCoeff(&arg);
    if (pca.components(arg, c) < 0) pca.components.col(c) *= -1.0;
  }
  return pca;
}

FeatureMatrix pca_reduce(const FeatureMatrix& features, int k, const std::vector<std::size_t>& fit_rows) {
  if (fit_rows.empty()) throw EvalError("pca: empty fit set");
  Eigen::MatrixXd fit(static_cast<Eigen::Index>(fit_rows.size()), features.values.cols());
  for (std::size_t i = 0; i < fit_rows.size(); ++i) {
    if (fit_rows[i] >= features.rows.size()) throw EvalError("pca: fit row out of range");
    fit.row(static_cast<Eigen::Index>(i)) = features.values.row(static_cast<Eigen::Index>(fit_rows[i]));
  }
  const auto pca = fit_pca(fit, k);
  return make_feature_matrix(features.tap, features.rows, pca.project(features.values));
}

FeatureMatrix pca_reduce(const FeatureMatrix& fit, const FeatureMatrix& apply, int k) {
  if (fit.values.cols() != apply.values.cols()) throw EvalError("pca: fit and apply widths differ");
  const auto pca = fit_pca(fit.values, k);
  return make_feature_matrix(apply.tap, apply.rows, pca.project(apply.values));
}

}  // namespace viewmatch::evalign
