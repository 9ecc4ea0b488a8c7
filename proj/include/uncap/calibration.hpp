#pragma once

#include <string>
#include <utility>
#include <vector>

#include "uncap/scenario.hpp"

namespace uncap {

enum class CdfMode {
    plain,     // count / n
    corrected  // count / (n+1), clipped to [0,1]
};

// Split-conformal calibrator over nonconformity scores 1 - confidence[true].
struct NonconformityModel {
    std::vector<double> scores;  // sorted ascending, values in [0,1]
    CdfMode mode = CdfMode::plain;

    size_t n() const { return scores.size(); }
};

using LabelledConfidence = std::pair<std::vector<double>, int>;

NonconformityModel fit_calibrator(const std::vector<LabelledConfidence>& calib_set,
                                  CdfMode mode = CdfMode::plain);

// c* = 1 - second-highest confidence; the threshold that makes the prediction
// band a singleton at the argmax class.
double singleton_threshold(const std::vector<double>& conf);

double empirical_cdf(const NonconformityModel& model, double x);

struct Calibrated {
    double p_calibrated = 0.0;
    double u_p = 1.0;  // 1 - p_calibrated
};

Calibrated calibrate(const NonconformityModel& model, const std::vector<double>& conf);

struct CalibratedDetection {
    Detection detection;
    int predicted_class = 0;
    double c_star = 0.0;
    double p_calibrated = 0.0;
    double u_p = 1.0;
};

CalibratedDetection calibrate_detection(const NonconformityModel& model, const Detection& det);

struct PredictionBand {
    std::vector<int> class_indices;  // singleton by construction
};

// Classes whose confidence strictly exceeds 1 - c*. With c* from
// singleton_threshold this is exactly {argmax}; an exact top-two tie has no
// well-defined singleton and raises an error.
PredictionBand prediction_band(const std::vector<double>& conf, double c_star);

struct CoverageResult {
    double coverage = 0.0;  // fraction of test items with true class == argmax
    double mean_p_calibrated = 0.0;
};

CoverageResult coverage_check(const NonconformityModel& model,
                              const std::vector<LabelledConfidence>& test_set);

// Persistence: JSON {"scores": [...], "n": ..., "mode": ...}.
std::string serialize_calibrator(const NonconformityModel& model);
NonconformityModel deserialize_calibrator(const std::string& json_text);
void save_calibrator(const NonconformityModel& model, const std::string& path);
NonconformityModel load_calibrator(const std::string& path);

}  // namespace uncap
