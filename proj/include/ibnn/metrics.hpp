#pragma once

// Ensemble prediction and evaluation metrics: classification error, NLL,
// expected calibration error (15 equal bins, first bin closed at 0, all bins
// right-closed), reliability-diagram data, and the entropy decomposition
// total = aleatoric + epistemic. Entropies are in nats with 0 log 0 := 0.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ibnn/model.hpp"
#include "ibnn/random.hpp"
#include "ibnn/tensor.hpp"

namespace ibnn {

struct PredictionEntry {
    std::int64_t label = 0;
    std::vector<std::vector<double>> samples;  // M softmax vectors of length C
    std::vector<double> mean;                  // arithmetic mean of the samples
};

using PredictionSet = std::vector<PredictionEntry>;

// Rebuilds the cached mean (used after edits in tests and by the dump reader).
void refresh_mean(PredictionEntry& entry);

// Draws S z-samples from each of the K components, runs the network on x and
// stores the M = K*S softmax rows per datapoint. Sub-streams are derived from
// `rng` per draw, so results do not depend on n_threads.
PredictionSet predict(const Model& model, const TensorPtr& x,
                      std::span<const std::int64_t> labels, std::int64_t S, Rng& rng,
                      int n_threads = 1);

// Per-point mean and sample std of the M = K*S sampled outputs (regression).
struct RegressionPrediction {
    std::vector<double> mean;
    std::vector<double> stddev;
};
RegressionPrediction predict_regression(const Model& model, const TensorPtr& x, std::int64_t S,
                                        Rng& rng);

// error = fraction of argmax(mean) != label (ties broken toward the lowest
// class index); nll = mean of -log(mean[label]).
struct ErrorNll {
    double error = 0.0;
    double nll = 0.0;
};
ErrorNll error_and_nll(const PredictionSet& predictions);

double ece(const PredictionSet& predictions, int n_bins = 15);

struct ReliabilityBin {
    double confidence = 0.0;  // mean confidence of members, 0 when empty
    double accuracy = 0.0;
    std::int64_t count = 0;
};
std::vector<ReliabilityBin> reliability_diagram(const PredictionSet& predictions, int n_bins = 15);

struct UncertaintyReport {
    std::vector<double> total;      // per point, nats
    std::vector<double> aleatoric;
    std::vector<double> epistemic;
    double mean_total = 0.0;        // MPE
    double mean_aleatoric = 0.0;
    double mean_epistemic = 0.0;
};
UncertaintyReport uncertainty_decomposition(const PredictionSet& predictions);

// Bin that holds `confidence` under the frozen convention: index i covers
// (i/n, (i+1)/n], except bin 0 which also contains 0.
int ece_bin_index(double confidence, int n_bins);

std::size_t argmax_lowest(std::span<const double> v);
double entropy_nats(std::span<const double> p);

// CSV dump with columns point_id, sample_id, label, p_0..p_{C-1}; values
// round-trip exactly so metrics on the dump equal in-process metrics.
void write_prediction_dump(const PredictionSet& predictions, const std::string& path);
PredictionSet read_prediction_dump(const std::string& path);

}  // namespace ibnn
