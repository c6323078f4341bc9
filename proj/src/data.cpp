#include "ibnn/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "ibnn/csv.hpp"
#include "ibnn/errors.hpp"

namespace ibnn {

TensorPtr gather_inputs(const Dataset& data, std::span<const std::int64_t> indices) {
    const std::int64_t ex = data.example_size();
    Shape shape;
    shape.push_back(static_cast<std::int64_t>(indices.size()));
    shape.insert(shape.end(), data.example_shape.begin(), data.example_shape.end());
    std::vector<double> values(indices.size() * static_cast<std::size_t>(ex));
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const std::int64_t idx = indices[i];
        if (idx < 0 || idx >= data.size()) throw std::out_of_range("dataset index out of range");
        std::copy_n(data.inputs.begin() + idx * ex, ex, values.begin() + static_cast<std::int64_t>(i) * ex);
    }
    return make_tensor(std::move(shape), std::move(values));
}

std::vector<std::int64_t> gather_labels(const Dataset& data, std::span<const std::int64_t> indices) {
    std::vector<std::int64_t> out(indices.size());
    for (std::size_t i = 0; i < indices.size(); ++i) out[i] = data.labels.at(indices[i]);
    return out;
}

std::vector<double> gather_targets(const Dataset& data, std::span<const std::int64_t> indices) {
    std::vector<double> out(indices.size());
    for (std::size_t i = 0; i < indices.size(); ++i) out[i] = data.targets.at(indices[i]);
    return out;
}

CubicRegression make_cubic_regression(std::int64_t n, double x_min, double x_max, double noise_std,
                                      Rng& rng, double grid_extension, std::int64_t grid_points) {
    if (n < 1) throw ConfigError("make_cubic_regression: n must be >= 1");
    if (!(x_max > x_min)) throw ConfigError("make_cubic_regression: empty x range");

    CubicRegression out;
    out.train.example_shape = {1};
    out.train.split = "train";
    std::uniform_real_distribution<double> ux(x_min, x_max);
    std::normal_distribution<double> noise(0.0, 1.0);
    for (std::int64_t i = 0; i < n; ++i) {
        const double x = ux(rng);
        const double eps = noise_std > 0.0 ? noise_std * noise(rng) : 0.0;
        out.train.inputs.push_back(x);
        out.train.targets.push_back(x * x * x + eps);
    }

    const double span = x_max - x_min;
    const double g0 = x_min - grid_extension * span;
    const double g1 = x_max + grid_extension * span;
    out.grid.example_shape = {1};
    out.grid.split = "grid";
    for (std::int64_t i = 0; i < grid_points; ++i) {
        const double x = grid_points == 1
                             ? g0
                             : g0 + (g1 - g0) * static_cast<double>(i) /
                                        static_cast<double>(grid_points - 1);
        out.grid.inputs.push_back(x);
        out.grid.targets.push_back(x * x * x);
    }
    return out;
}

Dataset load_regression_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open regression csv: " + path);
    std::string line;
    if (!std::getline(in, line)) throw FormatError("regression csv: missing header");
    const auto header = split_csv_line(line);
    if (header.size() != 2 || header[0] != "x" || header[1] != "y") {
        throw FormatError("regression csv: expected header 'x,y'");
    }
    Dataset data;
    data.example_shape = {1};
    data.split = "train";
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto fields = split_csv_line(line);
        if (fields.size() != 2) throw FormatError("regression csv: ragged row");
        data.inputs.push_back(std::strtod(fields[0].c_str(), nullptr));
        data.targets.push_back(std::strtod(fields[1].c_str(), nullptr));
    }
    if (data.inputs.empty()) throw DataError("regression csv: no data rows");
    return data;
}

void save_regression_csv(const Dataset& data, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot open regression csv for writing: " + path);
    out << "x,y\n";
    for (std::size_t i = 0; i < data.targets.size(); ++i) {
        out << g17(data.inputs[i]) << ',' << g17(data.targets[i]) << "\n";
    }
}

namespace {

constexpr std::uint32_t kImagesMagic = 0x00000803;
constexpr std::uint32_t kLabelsMagic = 0x00000801;

std::uint32_t read_be_u32(std::istream& in, const char* what) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw FormatError(std::string("idx: truncated ") + what);
    return (static_cast<std::uint32_t>(b[0]) << 24) | (static_cast<std::uint32_t>(b[1]) << 16) |
           (static_cast<std::uint32_t>(b[2]) << 8) | static_cast<std::uint32_t>(b[3]);
}

void write_be_u32(std::ostream& out, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                                static_cast<unsigned char>(v >> 16),
                                static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream imgs(images_path, std::ios::binary);
    if (!imgs) throw DataError("cannot open idx image file: " + images_path);
    const std::uint32_t imagic = read_be_u32(imgs, "image magic");
    if (imagic != kImagesMagic) {
        char msg[48];
        std::snprintf(msg, sizeof(msg), "idx: bad image magic 0x%08x", imagic);
        throw FormatError(msg);
    }
    const std::uint32_t count = read_be_u32(imgs, "image count");
    const std::uint32_t rows = read_be_u32(imgs, "image rows");
    const std::uint32_t cols = read_be_u32(imgs, "image cols");
    std::vector<std::uint8_t> pixels(static_cast<std::size_t>(count) * rows * cols);
    imgs.read(reinterpret_cast<char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
    if (imgs.gcount() != static_cast<std::streamsize>(pixels.size())) {
        throw FormatError("idx: truncated image data");
    }

    std::ifstream labs(labels_path, std::ios::binary);
    if (!labs) throw DataError("cannot open idx label file: " + labels_path);
    const std::uint32_t lmagic = read_be_u32(labs, "label magic");
    if (lmagic != kLabelsMagic) throw FormatError("idx: bad label magic");
    const std::uint32_t lcount = read_be_u32(labs, "label count");
    if (lcount != count) {
        throw DataError("idx: image count " + std::to_string(count) + " != label count " +
                        std::to_string(lcount));
    }
    std::vector<std::uint8_t> labels(lcount);
    labs.read(reinterpret_cast<char*>(labels.data()), static_cast<std::streamsize>(labels.size()));
    if (labs.gcount() != static_cast<std::streamsize>(labels.size())) {
        throw FormatError("idx: truncated label data");
    }

    Dataset data;
    data.example_shape = {1, static_cast<std::int64_t>(rows), static_cast<std::int64_t>(cols)};
    data.split = "test";
    data.inputs.resize(pixels.size());
    for (std::size_t i = 0; i < pixels.size(); ++i) {
        data.inputs[i] = static_cast<double>(pixels[i]) / 255.0;
    }
    data.labels.assign(labels.begin(), labels.end());
    return data;
}

void write_idx_images(const std::string& path, std::span<const std::uint8_t> pixels,
                      std::int64_t count, std::int64_t rows, std::int64_t cols) {
    if (static_cast<std::int64_t>(pixels.size()) != count * rows * cols) {
        throw DataError("write_idx_images: pixel count mismatch");
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open idx image file for writing: " + path);
    write_be_u32(out, kImagesMagic);
    write_be_u32(out, static_cast<std::uint32_t>(count));
    write_be_u32(out, static_cast<std::uint32_t>(rows));
    write_be_u32(out, static_cast<std::uint32_t>(cols));
    out.write(reinterpret_cast<const char*>(pixels.data()),
              static_cast<std::streamsize>(pixels.size()));
    if (!out) throw DataError("idx image write failed: " + path);
}

void write_idx_labels(const std::string& path, std::span<const std::uint8_t> labels) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open idx label file for writing: " + path);
    write_be_u32(out, kLabelsMagic);
    write_be_u32(out, static_cast<std::uint32_t>(labels.size()));
    out.write(reinterpret_cast<const char*>(labels.data()),
              static_cast<std::streamsize>(labels.size()));
    if (!out) throw DataError("idx label write failed: " + path);
}

TrainTest make_synthetic_images(std::int64_t n_train, std::int64_t n_test, std::int64_t classes,
                                std::int64_t height, std::int64_t width, double pixel_noise,
                                double label_noise, Rng& rng) {
    if (classes < 2) throw ConfigError("make_synthetic_images: need at least 2 classes");
    const std::int64_t ex = height * width;
    std::uniform_real_distribution<double> upix(0.0, 1.0);
    std::vector<double> prototypes(static_cast<std::size_t>(classes * ex));
    for (auto& p : prototypes) p = upix(rng);

    std::normal_distribution<double> noise(0.0, 1.0);
    std::uniform_int_distribution<std::int64_t> uclass(0, classes - 1);
    std::uniform_real_distribution<double> u01(0.0, 1.0);

    auto fill = [&](Dataset& data, std::int64_t n, const char* split) {
        data.example_shape = {1, height, width};
        data.split = split;
        data.inputs.reserve(static_cast<std::size_t>(n * ex));
        data.labels.reserve(static_cast<std::size_t>(n));
        for (std::int64_t i = 0; i < n; ++i) {
            const std::int64_t c = uclass(rng);
            const double* proto = prototypes.data() + c * ex;
            for (std::int64_t j = 0; j < ex; ++j) {
                data.inputs.push_back(std::clamp(proto[j] + pixel_noise * noise(rng), 0.0, 1.0));
            }
            std::int64_t label = c;
            if (label_noise > 0.0 && u01(rng) < label_noise) label = uclass(rng);
            data.labels.push_back(label);
        }
    };

    TrainTest out;
    fill(out.train, n_train, "train");
    fill(out.test, n_test, "test");
    return out;
}

std::vector<double> gaussian_mix_apply(std::span<const double> x, double gamma,
                                       std::span<const double> eps) {
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("gaussian mix: gamma outside [0,1]");
    if (eps.size() != x.size()) throw ShapeError("gaussian mix: eps size mismatch");
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = (1.0 - gamma) * x[i] + gamma * eps[i];
    return out;
}

std::vector<double> gaussian_mix_corrupt(std::span<const double> x, double gamma, Rng& rng) {
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("gaussian mix: gamma outside [0,1]");
    std::normal_distribution<double> noise(0.0, 1.0);
    std::vector<double> eps(x.size());
    for (auto& e : eps) e = noise(rng);
    return gaussian_mix_apply(x, gamma, eps);
}

std::vector<double> salt_pepper_corrupt(std::span<const double> x, double p, Rng& rng) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("salt-and-pepper: p outside [0,1]");
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::vector<double> out(x.begin(), x.end());
    for (auto& v : out) {
        if (u01(rng) < p) v = u01(rng) < 0.5 ? 1.0 : 0.0;
    }
    return out;
}

Dataset corrupt_dataset(const Dataset& data, CorruptionKind kind, double intensity, Rng& rng) {
    Dataset out = data;
    out.inputs = kind == CorruptionKind::GaussianMix
                     ? gaussian_mix_corrupt(data.inputs, intensity, rng)
                     : salt_pepper_corrupt(data.inputs, intensity, rng);
    return out;
}

std::vector<SweepRow> corruption_sweep(const Model& model, const Dataset& test,
                                       CorruptionKind kind, std::span<const double> intensities,
                                       std::int64_t S, std::uint64_t seed, int n_threads) {
    for (std::size_t i = 1; i < intensities.size(); ++i) {
        if (intensities[i] < intensities[i - 1]) {
            throw ConfigError("corruption_sweep: intensities must be sorted ascending");
        }
    }
    std::vector<std::int64_t> all(static_cast<std::size_t>(test.size()));
    for (std::int64_t i = 0; i < test.size(); ++i) all[i] = i;

    std::vector<SweepRow> rows;
    rows.reserve(intensities.size());
    for (std::size_t i = 0; i < intensities.size(); ++i) {
        Rng corrupt_rng = make_rng(seed, {0xC0FFEEull, static_cast<std::uint64_t>(i)});
        const Dataset corrupted = corrupt_dataset(test, kind, intensities[i], corrupt_rng);
        auto x = gather_inputs(corrupted, all);
        Rng predict_rng = make_rng(seed, {0xBEEFull, static_cast<std::uint64_t>(i)});
        const auto preds = predict(model, x, corrupted.labels, S, predict_rng, n_threads);
        const auto report = uncertainty_decomposition(preds);
        rows.push_back({intensities[i], report.mean_total, report.mean_aleatoric,
                        report.mean_epistemic});
    }
    return rows;
}

}  // namespace ibnn
