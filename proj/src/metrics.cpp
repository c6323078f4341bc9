#include "ibnn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <thread>

#include "ibnn/csv.hpp"
#include "ibnn/errors.hpp"

namespace ibnn {

void refresh_mean(PredictionEntry& entry) {
    if (entry.samples.empty()) throw DataError("prediction entry has no samples");
    const std::size_t C = entry.samples.front().size();
    entry.mean.assign(C, 0.0);
    for (const auto& s : entry.samples) {
        if (s.size() != C) throw DataError("prediction entry has ragged sample rows");
        for (std::size_t j = 0; j < C; ++j) entry.mean[j] += s[j];
    }
    const double inv = 1.0 / static_cast<double>(entry.samples.size());
    for (auto& v : entry.mean) v *= inv;
}

std::size_t argmax_lowest(std::span<const double> v) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i) {
        if (v[i] > v[best]) best = i;
    }
    return best;
}

double entropy_nats(std::span<const double> p) {
    double h = 0.0;
    for (double q : p) {
        if (q > 0.0) h -= q * std::log(q);
    }
    return h;
}

namespace {

// One forward draw -> softmax rows for the whole batch.
std::vector<std::vector<double>> draw_softmax(const Model& model, const TensorPtr& x,
                                              std::int64_t k, std::uint64_t seed) {
    Rng rng(seed);
    auto out = forward_sample(model, x, k, rng);
    auto logp = log_softmax(out);
    const std::int64_t N = logp->shape[0], C = logp->shape[1];
    std::vector<std::vector<double>> rows(static_cast<std::size_t>(N));
    for (std::int64_t i = 0; i < N; ++i) {
        auto& r = rows[i];
        r.resize(static_cast<std::size_t>(C));
        for (std::int64_t j = 0; j < C; ++j) r[j] = std::exp(logp->values[i * C + j]);
    }
    return rows;
}

}  // namespace

PredictionSet predict(const Model& model, const TensorPtr& x,
                      std::span<const std::int64_t> labels, std::int64_t S, Rng& rng,
                      int n_threads) {
    if (S < 1) throw ConfigError("predict: S must be >= 1");
    if (model.likelihood != Likelihood::Classification) {
        throw ConfigError("predict requires a classification model");
    }
    const std::int64_t N = x->shape[0];
    if (static_cast<std::int64_t>(labels.size()) != N) {
        throw DataError("predict: label count does not match batch size");
    }

    const std::int64_t draws = model.K * S;
    std::vector<std::int64_t> comp(static_cast<std::size_t>(draws));
    std::vector<std::uint64_t> seeds(static_cast<std::size_t>(draws));
    for (std::int64_t k = 0, d = 0; k < model.K; ++k) {
        for (std::int64_t s = 0; s < S; ++s, ++d) {
            comp[d] = k;
            seeds[d] = rng();
        }
    }

    std::vector<std::vector<std::vector<double>>> per_draw(static_cast<std::size_t>(draws));
    const int threads = std::clamp<int>(n_threads, 1, static_cast<int>(draws));
    if (threads == 1) {
        for (std::int64_t d = 0; d < draws; ++d) {
            per_draw[d] = draw_softmax(model, x, comp[d], seeds[d]);
        }
    } else {
        std::vector<std::thread> pool;
        pool.reserve(threads);
        for (int t = 0; t < threads; ++t) {
            pool.emplace_back([&, t]() {
                for (std::int64_t d = t; d < draws; d += threads) {
                    per_draw[d] = draw_softmax(model, x, comp[d], seeds[d]);
                }
            });
        }
        for (auto& th : pool) th.join();
    }

    PredictionSet set(static_cast<std::size_t>(N));
    for (std::int64_t i = 0; i < N; ++i) {
        auto& entry = set[i];
        entry.label = labels[i];
        entry.samples.reserve(static_cast<std::size_t>(draws));
        for (std::int64_t d = 0; d < draws; ++d) entry.samples.push_back(per_draw[d][i]);
        refresh_mean(entry);
    }
    return set;
}

RegressionPrediction predict_regression(const Model& model, const TensorPtr& x, std::int64_t S,
                                        Rng& rng) {
    if (S < 1) throw ConfigError("predict_regression: S must be >= 1");
    const std::int64_t N = x->shape[0];
    const std::int64_t draws = model.K * S;
    std::vector<std::vector<double>> outs(static_cast<std::size_t>(draws));
    for (std::int64_t k = 0, d = 0; k < model.K; ++k) {
        for (std::int64_t s = 0; s < S; ++s, ++d) {
            Rng draw_rng(rng());
            auto out = forward_sample(model, x, k, draw_rng);
            if (out->shape != Shape{N, 1}) {
                throw ShapeError("predict_regression expects a single output, got " +
                                 shape_str(out->shape));
            }
            outs[d] = out->values;
        }
    }
    RegressionPrediction pred;
    pred.mean.resize(static_cast<std::size_t>(N));
    pred.stddev.assign(static_cast<std::size_t>(N), 0.0);
    for (std::int64_t i = 0; i < N; ++i) {
        double m = 0.0;
        for (std::int64_t d = 0; d < draws; ++d) m += outs[d][i];
        m /= static_cast<double>(draws);
        pred.mean[i] = m;
        if (draws > 1) {
            double ss = 0.0;
            for (std::int64_t d = 0; d < draws; ++d) {
                const double diff = outs[d][i] - m;
                ss += diff * diff;
            }
            pred.stddev[i] = std::sqrt(ss / static_cast<double>(draws - 1));
        }
    }
    return pred;
}

ErrorNll error_and_nll(const PredictionSet& predictions) {
    if (predictions.empty()) throw DataError("error_and_nll: empty prediction set");
    std::int64_t wrong = 0;
    double nll = 0.0;
    for (const auto& e : predictions) {
        const auto pred = static_cast<std::int64_t>(argmax_lowest(e.mean));
        if (pred != e.label) ++wrong;
        nll -= std::log(e.mean[static_cast<std::size_t>(e.label)]);
    }
    const double n = static_cast<double>(predictions.size());
    return {static_cast<double>(wrong) / n, nll / n};
}

int ece_bin_index(double confidence, int n_bins) {
    int idx = static_cast<int>(std::ceil(confidence * n_bins)) - 1;
    idx = std::clamp(idx, 0, n_bins - 1);
    // Settle float boundaries against the interval convention
    // (i/n, (i+1)/n], bin 0 closed at 0.
    while (idx > 0 && confidence <= static_cast<double>(idx) / n_bins) --idx;
    while (idx + 1 < n_bins && confidence > static_cast<double>(idx + 1) / n_bins) ++idx;
    return idx;
}

std::vector<ReliabilityBin> reliability_diagram(const PredictionSet& predictions, int n_bins) {
    if (n_bins < 1) throw ConfigError("reliability_diagram: n_bins must be >= 1");
    // Confidences are summed in sorted order so the result does not depend on
    // the ordering of the prediction collection.
    std::vector<std::vector<double>> confs(static_cast<std::size_t>(n_bins));
    std::vector<std::int64_t> correct(static_cast<std::size_t>(n_bins), 0);
    for (const auto& e : predictions) {
        const std::size_t pred = argmax_lowest(e.mean);
        const double conf = e.mean[pred];
        const int b = ece_bin_index(conf, n_bins);
        confs[b].push_back(conf);
        correct[b] += static_cast<std::int64_t>(pred) == e.label ? 1 : 0;
    }
    std::vector<ReliabilityBin> bins(static_cast<std::size_t>(n_bins));
    for (int b = 0; b < n_bins; ++b) {
        bins[b].count = static_cast<std::int64_t>(confs[b].size());
        if (bins[b].count > 0) {
            std::sort(confs[b].begin(), confs[b].end());
            double sum = 0.0;
            for (double c : confs[b]) sum += c;
            bins[b].confidence = sum / static_cast<double>(bins[b].count);
            bins[b].accuracy = static_cast<double>(correct[b]) / static_cast<double>(bins[b].count);
        }
    }
    return bins;
}

double ece(const PredictionSet& predictions, int n_bins) {
    if (predictions.empty()) throw DataError("ece: empty prediction set");
    const auto bins = reliability_diagram(predictions, n_bins);
    const double total = static_cast<double>(predictions.size());
    double e = 0.0;
    for (const auto& b : bins) {
        if (b.count > 0) {
            e += (static_cast<double>(b.count) / total) * std::abs(b.accuracy - b.confidence);
        }
    }
    return e;
}

UncertaintyReport uncertainty_decomposition(const PredictionSet& predictions) {
    UncertaintyReport report;
    report.total.reserve(predictions.size());
    report.aleatoric.reserve(predictions.size());
    report.epistemic.reserve(predictions.size());
    for (const auto& e : predictions) {
        if (e.samples.empty()) throw DataError("uncertainty_decomposition: entry has no samples");
        const double total = entropy_nats(e.mean);
        double ale = 0.0;
        for (const auto& s : e.samples) ale += entropy_nats(s);
        ale /= static_cast<double>(e.samples.size());
        report.total.push_back(total);
        report.aleatoric.push_back(ale);
        report.epistemic.push_back(total - ale);
    }
    const double n = static_cast<double>(predictions.size());
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        report.mean_total += report.total[i];
        report.mean_aleatoric += report.aleatoric[i];
        report.mean_epistemic += report.epistemic[i];
    }
    if (n > 0) {
        report.mean_total /= n;
        report.mean_aleatoric /= n;
        report.mean_epistemic /= n;
    }
    return report;
}

void write_prediction_dump(const PredictionSet& predictions, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot open prediction dump for writing: " + path);
    const std::size_t C = predictions.empty() ? 0 : predictions.front().mean.size();
    out << "point_id,sample_id,label";
    for (std::size_t j = 0; j < C; ++j) out << ",p_" << j;
    out << "\n";
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        const auto& e = predictions[i];
        for (std::size_t s = 0; s < e.samples.size(); ++s) {
            out << i << ',' << s << ',' << e.label;
            for (double p : e.samples[s]) out << ',' << g17(p);
            out << "\n";
        }
    }
    if (!out) throw DataError("prediction dump write failed: " + path);
}

PredictionSet read_prediction_dump(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open prediction dump: " + path);
    std::string line;
    if (!std::getline(in, line)) throw FormatError("prediction dump: missing header");
    const auto header = split_csv_line(line);
    if (header.size() < 4 || header[0] != "point_id" || header[1] != "sample_id" ||
        header[2] != "label") {
        throw FormatError("prediction dump: unexpected header");
    }
    const std::size_t C = header.size() - 3;

    PredictionSet set;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto fields = split_csv_line(line);
        if (fields.size() != header.size()) throw FormatError("prediction dump: ragged row");
        const auto point = static_cast<std::size_t>(std::stoll(fields[0]));
        if (point == set.size()) {
            set.emplace_back();
            set.back().label = std::stoll(fields[2]);
        } else if (point != set.size() - 1) {
            throw FormatError("prediction dump: point ids must be grouped and consecutive");
        }
        std::vector<double> probs(C);
        double sum = 0.0;
        for (std::size_t j = 0; j < C; ++j) {
            probs[j] = std::strtod(fields[3 + j].c_str(), nullptr);
            if (probs[j] < 0.0) throw DataError("prediction dump: negative probability");
            sum += probs[j];
        }
        if (std::abs(sum - 1.0) > 1e-9) {
            throw DataError("prediction dump: probabilities sum to " + g17(sum));
        }
        set.back().samples.push_back(std::move(probs));
    }
    for (auto& e : set) refresh_mean(e);
    return set;
}

}  // namespace ibnn
