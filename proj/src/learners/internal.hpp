#pragma once

#include <vector>

#include "serverlens/learners.hpp"

namespace serverlens::detail {

std::vector<double> predict_gp(const GpModel& model, const Matrix& rows);
std::vector<double> predict_net(const NetModel& model, const Matrix& rows);

}  // namespace serverlens::detail
