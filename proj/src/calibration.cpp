#include "uncap/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "uncap/common.hpp"

namespace uncap {

NonconformityModel fit_calibrator(const std::vector<LabelledConfidence>& calib_set,
                                  CdfMode mode) {
    if (calib_set.empty()) throw InvariantError("calibration set must be non-empty");
    NonconformityModel model;
    model.mode = mode;
    model.scores.reserve(calib_set.size());
    for (const auto& [conf, true_class] : calib_set) {
        if (true_class < 0 || true_class >= static_cast<int>(conf.size()))
            throw InvariantError("true_class out of range");
        model.scores.push_back(1.0 - conf[true_class]);
    }
    std::sort(model.scores.begin(), model.scores.end());
    return model;
}

double singleton_threshold(const std::vector<double>& conf) {
    if (conf.size() < 2) throw InvariantError("confidence vector must have L >= 2 entries");
    double top1 = -1.0, top2 = -1.0;
    for (double v : conf) {
        if (v > top1) {
            top2 = top1;
            top1 = v;
        } else if (v > top2) {
            top2 = v;
        }
    }
    return 1.0 - top2;
}

double empirical_cdf(const NonconformityModel& model, double x) {
    auto count = std::upper_bound(model.scores.begin(), model.scores.end(), x) -
                 model.scores.begin();
    double denom = model.mode == CdfMode::corrected
                       ? static_cast<double>(model.n()) + 1.0
                       : static_cast<double>(model.n());
    return std::clamp(static_cast<double>(count) / denom, 0.0, 1.0);
}

Calibrated calibrate(const NonconformityModel& model, const std::vector<double>& conf) {
    double c_star = singleton_threshold(conf);
    Calibrated c;
    c.p_calibrated = empirical_cdf(model, c_star);
    c.u_p = 1.0 - c.p_calibrated;
    return c;
}

CalibratedDetection calibrate_detection(const NonconformityModel& model, const Detection& det) {
    CalibratedDetection cd;
    cd.detection = det;
    cd.predicted_class = det.predicted_class();
    cd.c_star = singleton_threshold(det.confidence_vector);
    Calibrated c = calibrate(model, det.confidence_vector);
    cd.p_calibrated = c.p_calibrated;
    cd.u_p = c.u_p;
    return cd;
}

PredictionBand prediction_band(const std::vector<double>& conf, double c_star) {
    PredictionBand band;
    // threshold recovers the second-highest confidence; the epsilon absorbs the
    // 1 - (1 - x) rounding so that value itself never re-enters the band.
    double threshold = 1.0 - c_star;
    for (size_t l = 0; l < conf.size(); ++l)
        if (conf[l] > threshold + 1e-12) band.class_indices.push_back(static_cast<int>(l));
    if (band.class_indices.size() != 1)
        throw InvariantError("degenerate band: top-two confidences tied");
    return band;
}

CoverageResult coverage_check(const NonconformityModel& model,
                              const std::vector<LabelledConfidence>& test_set) {
    CoverageResult r;
    if (test_set.empty()) return r;
    int correct = 0;
    double sum_p = 0.0;
    for (const auto& [conf, true_class] : test_set) {
        int argmax = static_cast<int>(
            std::distance(conf.begin(), std::max_element(conf.begin(), conf.end())));
        if (argmax == true_class) ++correct;
        sum_p += calibrate(model, conf).p_calibrated;
    }
    r.coverage = static_cast<double>(correct) / test_set.size();
    r.mean_p_calibrated = sum_p / test_set.size();
    return r;
}

std::string serialize_calibrator(const NonconformityModel& model) {
    nlohmann::ordered_json j;
    j["scores"] = model.scores;
    j["n"] = model.n();
    j["mode"] = model.mode == CdfMode::corrected ? "corrected" : "plain";
    return j.dump();
}

NonconformityModel deserialize_calibrator(const std::string& json_text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("calibrator: ") + e.what());
    }
    NonconformityModel model;
    model.scores = j.at("scores").get<std::vector<double>>();
    model.mode = j.value("mode", "plain") == "corrected" ? CdfMode::corrected : CdfMode::plain;
    if (model.scores.empty()) throw InvariantError("calibrator must have n >= 1 scores");
    if (!std::is_sorted(model.scores.begin(), model.scores.end()))
        throw InvariantError("calibrator scores must be sorted ascending");
    for (double s : model.scores)
        if (s < 0.0 || s > 1.0) throw InvariantError("calibrator scores must be in [0,1]");
    return model;
}

void save_calibrator(const NonconformityModel& model, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write calibrator file: " + path);
    out << serialize_calibrator(model) << "\n";
}

NonconformityModel load_calibrator(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open calibrator file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return deserialize_calibrator(ss.str());
}

}  // namespace uncap
