#pragma once

// Dataset generation and loading plus the two corruption protocols used for
// out-of-distribution sweeps. Image inputs are normalized to [0,1]; the
// Gaussian mix x_hat = (1-gamma) x + gamma eps is applied as written, without
// re-clamping, so corrupted pixels may leave [0,1].

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ibnn/metrics.hpp"
#include "ibnn/model.hpp"
#include "ibnn/random.hpp"
#include "ibnn/tensor.hpp"

namespace ibnn {

struct Dataset {
    Shape example_shape;             // {D} for dense, {C,H,W} for images
    std::vector<double> inputs;      // size() * example_size(), row-major
    std::vector<std::int64_t> labels;   // classification targets
    std::vector<double> targets;        // regression targets
    std::string split;

    std::int64_t example_size() const { return numel(example_shape); }
    std::int64_t size() const {
        return static_cast<std::int64_t>(inputs.size()) / example_size();
    }
};

// Batch assembly: inputs as a (B x ...) tensor plus the matching targets.
TensorPtr gather_inputs(const Dataset& data, std::span<const std::int64_t> indices);
std::vector<std::int64_t> gather_labels(const Dataset& data, std::span<const std::int64_t> indices);
std::vector<double> gather_targets(const Dataset& data, std::span<const std::int64_t> indices);

// ---- regression toy data ----
// n points with x uniform on [x_min, x_max], y = x^3 + N(0, noise_std^2),
// plus a dense grid extending the range by `grid_extension` on both sides for
// extrapolation checks (grid targets are the noiseless x^3).
struct CubicRegression {
    Dataset train;
    Dataset grid;
};
CubicRegression make_cubic_regression(std::int64_t n, double x_min, double x_max, double noise_std,
                                      Rng& rng, double grid_extension = 0.5,
                                      std::int64_t grid_points = 201);

Dataset load_regression_csv(const std::string& path);
void save_regression_csv(const Dataset& data, const std::string& path);

// ---- IDX image files ----
// Big-endian IDX: magic 0x00000803 (images) / 0x00000801 (labels). Pixels are
// scaled to [0,1].
Dataset load_idx(const std::string& images_path, const std::string& labels_path);
void write_idx_images(const std::string& path, std::span<const std::uint8_t> pixels,
                      std::int64_t count, std::int64_t rows, std::int64_t cols);
void write_idx_labels(const std::string& path, std::span<const std::uint8_t> labels);

// ---- synthetic image classification ----
// Class prototypes with pixel noise, clamped to [0,1]; `label_noise` is the
// probability of replacing a label with a uniformly random class.
struct TrainTest {
    Dataset train;
    Dataset test;
};
TrainTest make_synthetic_images(std::int64_t n_train, std::int64_t n_test, std::int64_t classes,
                                std::int64_t height, std::int64_t width, double pixel_noise,
                                double label_noise, Rng& rng);

// ---- corruption protocols ----
enum class CorruptionKind { GaussianMix, SaltPepper };

// x_hat = (1-gamma) x + gamma eps with the supplied eps (the rng-free hook).
std::vector<double> gaussian_mix_apply(std::span<const double> x, double gamma,
                                       std::span<const double> eps);
std::vector<double> gaussian_mix_corrupt(std::span<const double> x, double gamma, Rng& rng);

// Each element independently replaced with probability p, equally likely 0 or 1.
std::vector<double> salt_pepper_corrupt(std::span<const double> x, double p, Rng& rng);

Dataset corrupt_dataset(const Dataset& data, CorruptionKind kind, double intensity, Rng& rng);

// ---- corruption sweep (mean predictive entropy vs intensity) ----
struct SweepRow {
    double intensity = 0.0;
    double mpe = 0.0;
    double aleatoric = 0.0;
    double epistemic = 0.0;
};
std::vector<SweepRow> corruption_sweep(const Model& model, const Dataset& test,
                                       CorruptionKind kind, std::span<const double> intensities,
                                       std::int64_t S, std::uint64_t seed, int n_threads = 1);

}  // namespace ibnn
