#pragma once

#include <string>
#include <vector>

#include "serverlens/common.hpp"
#include "serverlens/dataset.hpp"

namespace serverlens {

// K-nearest-neighbour imputer. Distances are Euclidean over the coordinates
// observed in both rows, rescaled by d / (number of shared coordinates), and
// are computed on unscaled features.
struct ImputerModel {
    std::size_t k = 5;
    Matrix reference;
    std::vector<double> means;
};

ImputerModel fit_imputer(const TaggedRows& train, std::size_t k, const std::vector<std::string>& feature_names = {});

// Fill every missing cell. Rows with no observed feature are taken wholesale
// from the training means and reported through `diagnostics`.
Matrix apply_imputer(const ImputerModel& model, const Matrix& rows, std::vector<Diagnostic>* diagnostics = nullptr);

struct ScalerModel {
    std::vector<double> mean;
    std::vector<double> sd;          // population sd; 1 for flagged columns
    std::vector<bool> zero_variance;  // flagged columns

    std::size_t size() const noexcept { return mean.size(); }
};

ScalerModel fit_scaler(const TaggedRows& train);
Matrix apply_scaler(const ScalerModel& model, const Matrix& rows);
Matrix invert_scaler(const ScalerModel& model, const Matrix& rows);

}  // namespace serverlens
