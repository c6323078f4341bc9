#include "ibnn/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

#include <json.hpp>

#include "ibnn/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint IO assumes a little-endian host");

namespace ibnn {

namespace {

constexpr char kMagic[8] = {'I', 'B', 'N', 'N', 'C', 'K', 'P', '1'};
constexpr std::uint32_t kFormatVersion = 1;

using nlohmann::json;

const char* act_name(Activation a) { return a == Activation::Relu ? "relu" : "identity"; }

Activation parse_act(const std::string& s) {
    if (s == "relu") return Activation::Relu;
    if (s == "identity") return Activation::Identity;
    throw FormatError("checkpoint: unknown activation '" + s + "'");
}

const char* kind_name(ModelKind k) {
    switch (k) {
        case ModelKind::Ibnn: return "ibnn";
        case ModelKind::BnnVi: return "bnnvi";
        case ModelKind::Deterministic: return "deterministic";
    }
    return "ibnn";
}

ModelKind parse_kind(const std::string& s) {
    if (s == "ibnn") return ModelKind::Ibnn;
    if (s == "bnnvi") return ModelKind::BnnVi;
    if (s == "deterministic") return ModelKind::Deterministic;
    throw FormatError("checkpoint: unknown model kind '" + s + "'");
}

void write_f32_array(std::ostream& out, const std::vector<double>& values) {
    std::vector<float> buf(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) buf[i] = static_cast<float>(values[i]);
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(float)));
}

void read_f32_array(std::istream& in, std::vector<double>& values) {
    std::vector<float> buf(values.size());
    in.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!in) throw FormatError("checkpoint: truncated tensor data");
    for (std::size_t i = 0; i < buf.size(); ++i) values[i] = static_cast<double>(buf[i]);
}

json layer_header(const Layer& layer, ModelKind kind) {
    json j;
    if (const auto* d = std::get_if<IbnnDenseLayer>(&layer)) {
        j["type"] = "dense";
        j["in"] = d->U->shape[1];
        j["out"] = d->U->shape[0];
        j["act"] = act_name(d->act);
        if (kind != ModelKind::Deterministic) j["K"] = d->posterior.K;
    } else if (const auto* c = std::get_if<IbnnConvLayer>(&layer)) {
        j["type"] = "conv";
        j["filters"] = c->kernel->shape[0];
        j["in_channels"] = c->kernel->shape[1];
        j["kh"] = c->kernel->shape[2];
        j["kw"] = c->kernel->shape[3];
        j["stride"] = c->stride;
        j["padding"] = c->padding;
        j["act"] = act_name(c->act);
        if (kind != ModelKind::Deterministic) j["K"] = c->posterior.K;
    } else if (const auto* v = std::get_if<BnnViDenseLayer>(&layer)) {
        j["type"] = "dense";
        j["in"] = v->w_mean->shape[1];
        j["out"] = v->w_mean->shape[0];
        j["act"] = act_name(v->act);
    }
    return j;
}

}  // namespace

void save_checkpoint(const Model& model, const std::string& path) {
    json header;
    header["format_version"] = kFormatVersion;
    header["kind"] = kind_name(model.kind);
    header["likelihood"] =
        model.likelihood == Likelihood::Classification ? "classification" : "regression";
    header["noise_std"] = model.noise_std;
    header["K"] = model.K;
    header["weight_prior_std"] = model.weight_prior_std;
    header["per_datapoint_noise"] = model.per_datapoint_noise;
    header["layers"] = json::array();
    for (const Layer& layer : model.layers) header["layers"].push_back(layer_header(layer, model.kind));

    const std::string header_str = header.dump();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open checkpoint for writing: " + path);
    out.write(kMagic, sizeof(kMagic));
    const auto len = static_cast<std::uint32_t>(header_str.size());
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));

    for (const Layer& layer : model.layers) {
        if (const auto* d = std::get_if<IbnnDenseLayer>(&layer)) {
            write_f32_array(out, d->U->values);
            write_f32_array(out, d->b->values);
            if (model.kind != ModelKind::Deterministic) {
                write_f32_array(out, d->posterior.means->values);
                write_f32_array(out, d->posterior.stds->values);
            }
        } else if (const auto* c = std::get_if<IbnnConvLayer>(&layer)) {
            write_f32_array(out, c->kernel->values);
            write_f32_array(out, c->bias->values);
            if (model.kind != ModelKind::Deterministic) {
                write_f32_array(out, c->posterior.means->values);
                write_f32_array(out, c->posterior.stds->values);
            }
        } else if (const auto* v = std::get_if<BnnViDenseLayer>(&layer)) {
            write_f32_array(out, v->w_mean->values);
            write_f32_array(out, v->w_std->values);
            write_f32_array(out, v->b_mean->values);
            write_f32_array(out, v->b_std->values);
        }
    }
    if (!out) throw DataError("checkpoint write failed: " + path);
}

Model load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint: " + path);

    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw FormatError("not an iBNN checkpoint: " + path);
    }
    std::uint32_t len = 0;
    in.read(reinterpret_cast<char*>(&len), sizeof(len));
    if (!in) throw FormatError("checkpoint: truncated header length");
    std::string header_str(len, '\0');
    in.read(header_str.data(), len);
    if (!in) throw FormatError("checkpoint: truncated header");

    json header;
    try {
        header = json::parse(header_str);
    } catch (const json::exception& e) {
        throw FormatError(std::string("checkpoint: bad header JSON: ") + e.what());
    }
    if (header.value("format_version", 0u) != kFormatVersion) {
        throw FormatError("checkpoint: unsupported format version");
    }

    Model model;
    try {
        model.kind = parse_kind(header.at("kind").get<std::string>());
        model.likelihood = header.at("likelihood").get<std::string>() == "regression"
                               ? Likelihood::Regression
                               : Likelihood::Classification;
        model.noise_std = header.at("noise_std").get<double>();
        model.K = header.at("K").get<std::int64_t>();
        model.weight_prior_std = header.at("weight_prior_std").get<double>();
        model.per_datapoint_noise = header.at("per_datapoint_noise").get<bool>();

        for (const json& lj : header.at("layers")) {
            const std::string type = lj.at("type").get<std::string>();
            const Activation act = parse_act(lj.at("act").get<std::string>());
            if (model.kind == ModelKind::BnnVi) {
                BnnViDenseLayer v;
                const auto in_dim = lj.at("in").get<std::int64_t>();
                const auto out_dim = lj.at("out").get<std::int64_t>();
                v.w_mean = zeros({out_dim, in_dim}, true);
                v.w_std = zeros({out_dim, in_dim}, true);
                v.b_mean = zeros({out_dim}, true);
                v.b_std = zeros({out_dim}, true);
                v.act = act;
                read_f32_array(in, v.w_mean->values);
                read_f32_array(in, v.w_std->values);
                read_f32_array(in, v.b_mean->values);
                read_f32_array(in, v.b_std->values);
                model.layers.emplace_back(std::move(v));
            } else if (type == "dense") {
                IbnnDenseLayer d;
                const auto in_dim = lj.at("in").get<std::int64_t>();
                const auto out_dim = lj.at("out").get<std::int64_t>();
                d.U = zeros({out_dim, in_dim}, true);
                d.b = zeros({out_dim}, true);
                d.act = act;
                read_f32_array(in, d.U->values);
                read_f32_array(in, d.b->values);
                if (model.kind == ModelKind::Deterministic) {
                    d.posterior = degenerate_posterior(in_dim);
                } else {
                    d.posterior.K = model.K;
                    d.posterior.dim = in_dim;
                    d.posterior.means = zeros({model.K, in_dim}, true);
                    d.posterior.stds = zeros({model.K, in_dim}, true);
                    read_f32_array(in, d.posterior.means->values);
                    read_f32_array(in, d.posterior.stds->values);
                }
                model.layers.emplace_back(std::move(d));
            } else if (type == "conv") {
                IbnnConvLayer c;
                const auto filters = lj.at("filters").get<std::int64_t>();
                const auto in_channels = lj.at("in_channels").get<std::int64_t>();
                const auto kh = lj.at("kh").get<std::int64_t>();
                const auto kw = lj.at("kw").get<std::int64_t>();
                c.kernel = zeros({filters, in_channels, kh, kw}, true);
                c.bias = zeros({filters}, true);
                c.stride = lj.at("stride").get<std::int64_t>();
                c.padding = lj.at("padding").get<std::int64_t>();
                c.act = act;
                read_f32_array(in, c.kernel->values);
                read_f32_array(in, c.bias->values);
                if (model.kind == ModelKind::Deterministic) {
                    c.posterior = degenerate_posterior(in_channels);
                } else {
                    c.posterior.K = model.K;
                    c.posterior.dim = in_channels;
                    c.posterior.means = zeros({model.K, in_channels}, true);
                    c.posterior.stds = zeros({model.K, in_channels}, true);
                    read_f32_array(in, c.posterior.means->values);
                    read_f32_array(in, c.posterior.stds->values);
                }
                model.layers.emplace_back(std::move(c));
            } else {
                throw FormatError("checkpoint: unknown layer type '" + type + "'");
            }
        }
    } catch (const json::exception& e) {
        throw FormatError(std::string("checkpoint: bad header field: ") + e.what());
    }
    validate(model);
    return model;
}

void load_pretrained(Model& model, const std::string& path, double sigma0, Rng& rng, bool freeze) {
    Model src = load_checkpoint(path);
    if (src.layers.size() != model.layers.size()) {
        throw ShapeError("pretrained checkpoint has " + std::to_string(src.layers.size()) +
                         " layers, model has " + std::to_string(model.layers.size()));
    }
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        auto* dst_d = std::get_if<IbnnDenseLayer>(&model.layers[i]);
        auto* dst_c = std::get_if<IbnnConvLayer>(&model.layers[i]);
        const auto* src_d = std::get_if<IbnnDenseLayer>(&src.layers[i]);
        const auto* src_c = std::get_if<IbnnConvLayer>(&src.layers[i]);
        if (dst_d && src_d) {
            if (dst_d->U->shape != src_d->U->shape) {
                throw ShapeError("layer " + std::to_string(i) + ": weight shape mismatch " +
                                 shape_str(dst_d->U->shape) + " vs " + shape_str(src_d->U->shape));
            }
            dst_d->U->values = src_d->U->values;
            dst_d->b->values = src_d->b->values;
            dst_d->posterior = init_posterior(model.K, dst_d->posterior.dim, sigma0, rng);
        } else if (dst_c && src_c) {
            if (dst_c->kernel->shape != src_c->kernel->shape) {
                throw ShapeError("layer " + std::to_string(i) + ": kernel shape mismatch");
            }
            dst_c->kernel->values = src_c->kernel->values;
            dst_c->bias->values = src_c->bias->values;
            dst_c->posterior = init_posterior(model.K, dst_c->posterior.dim, sigma0, rng);
        } else {
            throw ShapeError("layer " + std::to_string(i) + ": layer type mismatch");
        }
    }
    model.freeze_weights = freeze;
}

}  // namespace ibnn
