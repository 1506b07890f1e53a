// Copyright 2026 The viewmatch Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Core>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "viewmatch/trainer/trainer.hpp"

namespace viewmatch::evalign {

class EvalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Tap { Latents, FieldWeights, Penultimate, Embedding };

std::string to_string(Tap t);
Tap tap_from_string(const std::string& s);
// Taps a model kind can produce. Field weights need the field model,
// penultimate needs a classifier or the contrastive encoder, the embedding
// needs the contrastive projection.
bool tap_valid(fieldmodels::ModelKind kind, Tap tap);

struct ViewKey {
  std::string object_id;
  int view_index = 0;
  auto operator<=>(const ViewKey&) const = default;
};

struct FeatureMatrix {
  Tap tap = Tap::Latents;
  std::vector<ViewKey> rows;
  Eigen::MatrixXd values;  // rows x dims

  std::size_t row_of(const ViewKey& key) const;  // throws EvalError
  bool contains(const ViewKey& key) const;
  // Rebuilds the key index; call after editing `rows` directly.
  void reindex();
  void validate() const;  // finite, unique keys, shape agreement

 private:
  std::map<ViewKey, std::size_t> index_;
};

FeatureMatrix make_feature_matrix(Tap tap, std::vector<ViewKey> rows, Eigen::MatrixXd values);

// One forward pass per view with no pose input. Views are processed in
// fixed chunks so the output does not depend on `workers`.
FeatureMatrix extract_features(const fieldmodels::ModelConfig& model, const diffcore::ParameterSet<float>& params,
                               const trainer::TrainingData& data, Tap tap, int workers = 1);

// Rows of `data` restricted to at most `views_per_object` views per object
// (the lowest view indices); 0 keeps all.
trainer::TrainingData limit_views(const trainer::TrainingData& data, int views_per_object);

struct PcaModel {
  Eigen::RowVectorXd mean;
  Eigen::MatrixXd components;  // dims x k, orthonormal columns
  Eigen::VectorXd variances;   // descending, per component

  Eigen::MatrixXd project(const Eigen::MatrixXd& x) const;
};

// Principal components of the rows of `x`. Uses the dims x dims covariance
// when rows >= dims and the rows x rows Gram matrix otherwise. Each
// component's largest-magnitude entry is made positive. Directions with zero
// variance are completed to an orthonormal basis.
PcaModel fit_pca(const Eigen::MatrixXd& x, int k);

// Fits on `fit_rows` of `features` and projects every row.
FeatureMatrix pca_reduce(const FeatureMatrix& features, int k, const std::vector<std::size_t>& fit_rows);
// Fits on `fit` and projects `apply`.
FeatureMatrix pca_reduce(const FeatureMatrix& fit, const FeatureMatrix& apply, int k);

}  // namespace viewmatch::evalign
