#include "mflab/checkpoint.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace mflab {

using json = nlohmann::ordered_json;

bool Checkpoint::has_stage(const std::string& stage) const {
    return std::find(meta.stage_history.begin(), meta.stage_history.end(), stage) !=
           meta.stage_history.end();
}

EncoderSpec encoder_spec_of(const FrozenEncoder& enc) {
    return {enc.d_x, enc.d_z, enc.seed, enc.use_tanh, enc.param_hash()};
}

FrozenEncoder encoder_from_spec(const EncoderSpec& spec) {
    FrozenEncoder enc = FrozenEncoder::make(spec.d_x, spec.d_z, spec.seed, spec.tanh_lift);
    if (enc.param_hash() != spec.lift_hash)
        throw ConfigError("checkpoint encoder hash mismatch: lift construction changed");
    return enc;
}

namespace {

template <class Net>
std::vector<std::pair<std::string, Tensor>> collect_named(const Net& net) {
    std::vector<std::pair<std::string, Tensor>> out;
    net.for_each_param(
        [&](const std::string& name, const Tensor& t) { out.emplace_back(name, t); });
    return out;
}

template <class Net>
void load_named(Net& net, const std::vector<std::pair<std::string, Tensor>>& params,
                const char* what) {
    std::size_t i = 0;
    net.for_each_param([&](const std::string& name, Tensor& t) {
        if (i >= params.size())
            throw ConfigError(std::string(what) + ": checkpoint has too few parameter arrays");
        const auto& [stored_name, stored] = params[i];
        if (stored_name != name)
            throw ConfigError(std::string(what) + ": parameter order mismatch, expected '" +
                              name + "' got '" + stored_name + "'");
        if (!t.same_shape(stored))
            throw ConfigError(std::string(what) + ": shape mismatch for '" + name + "'");
        t = stored;
        ++i;
    });
    if (i != params.size())
        throw ConfigError(std::string(what) + ": checkpoint has extra parameter arrays");
}

}  // namespace

std::vector<std::pair<std::string, Tensor>> named_params(const VelocityNet& net) {
    return collect_named(net);
}
std::vector<std::pair<std::string, Tensor>> named_params(const FlowMapNet& net) {
    return collect_named(net);
}
std::vector<std::pair<std::string, Tensor>> named_params(const Mlp& net) {
    return collect_named(net);
}

namespace {

const std::vector<std::pair<std::string, Tensor>>& pick_arrays(const Checkpoint& ckpt,
                                                               bool use_ema) {
    if (!use_ema) return ckpt.params;
    if (ckpt.ema.empty()) throw ConfigError("checkpoint has no EMA arrays");
    return ckpt.ema;
}

}  // namespace

VelocityNet velocity_from_checkpoint(const Checkpoint& ckpt, bool use_ema) {
    if (ckpt.net_kind != "velocity")
        throw ConfigError("checkpoint holds a '" + ckpt.net_kind + "' net, expected velocity");
    Rng rng(0, "checkpoint-shell");
    VelocityNet net = make_velocity_net(ckpt.net_cfg, rng);
    load_named(net, pick_arrays(ckpt, use_ema), "velocity checkpoint");
    return net;
}

FlowMapNet flowmap_from_checkpoint(const Checkpoint& ckpt, bool use_ema) {
    if (ckpt.net_kind != "flowmap")
        throw ConfigError("checkpoint holds a '" + ckpt.net_kind + "' net, expected flowmap");
    Rng rng(0, "checkpoint-shell");
    FlowMapNet net = make_flowmap_net(ckpt.net_cfg, rng);
    load_named(net, pick_arrays(ckpt, use_ema), "flowmap checkpoint");
    return net;
}

Mlp decoder_from_checkpoint(const Checkpoint& ckpt) {
    if (ckpt.net_kind != "decoder")
        throw ConfigError("checkpoint holds a '" + ckpt.net_kind + "' net, expected decoder");
    Rng rng(0, "checkpoint-shell");
    Mlp net = make_mlp(ckpt.mlp_cfg, rng);
    load_named(net, ckpt.params, "decoder checkpoint");
    return net;
}

namespace {

json tensor_to_json(const Tensor& t) {
    json j;
    j["shape"] = t.shape();
    json values = json::array();
    for (std::size_t i = 0; i < t.size(); ++i) values.push_back(t[i]);
    j["values"] = std::move(values);
    return j;
}

Tensor tensor_from_json(const json& j) {
    std::vector<std::size_t> shape = j.at("shape").get<std::vector<std::size_t>>();
    std::vector<double> values = j.at("values").get<std::vector<double>>();
    std::size_t expect = shape.empty() ? 0 : 1;
    for (std::size_t s : shape) expect *= s;
    if (values.size() != expect)
        throw ConfigError("checkpoint tensor: value count does not match shape");
    return Tensor(std::move(shape), std::move(values));
}

json arrays_to_json(const std::vector<std::pair<std::string, Tensor>>& arr) {
    json out = json::array();
    for (const auto& [name, t] : arr) {
        json e;
        e["name"] = name;
        e["shape"] = t.shape();
        json values = json::array();
        for (std::size_t i = 0; i < t.size(); ++i) values.push_back(t[i]);
        e["values"] = std::move(values);
        out.push_back(std::move(e));
    }
    return out;
}

std::vector<std::pair<std::string, Tensor>> arrays_from_json(const json& j) {
    std::vector<std::pair<std::string, Tensor>> out;
    for (const json& e : j) out.emplace_back(e.at("name").get<std::string>(), tensor_from_json(e));
    return out;
}

json net_cfg_to_json(const NetConfig& c) {
    json j;
    j["dim"] = c.dim;
    j["hidden"] = c.hidden;
    j["depth"] = c.depth;
    j["num_classes"] = c.num_classes;
    j["frequencies"] = c.embed.num_frequencies;
    j["max_period"] = c.embed.max_period;
    j["zero_final"] = c.zero_final;
    return j;
}

NetConfig net_cfg_from_json(const json& j) {
    NetConfig c;
    c.dim = j.at("dim").get<std::size_t>();
    c.hidden = j.at("hidden").get<std::size_t>();
    c.depth = j.at("depth").get<std::size_t>();
    c.num_classes = j.at("num_classes").get<std::size_t>();
    c.embed.num_frequencies = j.at("frequencies").get<std::size_t>();
    c.embed.max_period = j.at("max_period").get<double>();
    c.zero_final = j.at("zero_final").get<bool>();
    return c;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    json doc;
    doc["format_version"] = ckpt.meta.format_version;
    json meta;
    meta["stage"] = ckpt.meta.stage;
    meta["iteration"] = ckpt.meta.iteration;
    json rng;
    rng["seed"] = ckpt.meta.rng_seed;
    rng["stream"] = ckpt.meta.rng_stream;
    rng["counter"] = ckpt.meta.rng_counter;
    meta["rng"] = std::move(rng);
    meta["parent_hash"] = ckpt.meta.parent_hash;
    meta["stage_history"] = ckpt.meta.stage_history;
    doc["meta"] = std::move(meta);

    json enc;
    enc["d_x"] = ckpt.encoder.d_x;
    enc["d_z"] = ckpt.encoder.d_z;
    enc["seed"] = ckpt.encoder.seed;
    enc["tanh"] = ckpt.encoder.tanh_lift;
    enc["lift_hash"] = ckpt.encoder.lift_hash;
    doc["encoder"] = std::move(enc);

    doc["net_kind"] = ckpt.net_kind;
    if (ckpt.net_kind == "decoder") {
        json mc;
        mc["in"] = ckpt.mlp_cfg.in;
        mc["hidden"] = ckpt.mlp_cfg.hidden;
        mc["out"] = ckpt.mlp_cfg.out;
        mc["depth"] = ckpt.mlp_cfg.depth;
        doc["net_config"] = std::move(mc);
    } else {
        doc["net_config"] = net_cfg_to_json(ckpt.net_cfg);
    }
    doc["params"] = arrays_to_json(ckpt.params);
    doc["ema"] = arrays_to_json(ckpt.ema);
    doc["config_snapshot"] = ckpt.config_snapshot;

    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot open for writing: " + path);
    out << doc.dump(2) << "\n";
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open checkpoint: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    const std::string text = buf.str();

    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        const std::size_t upto = std::min<std::size_t>(e.byte, text.size());
        const int line =
            1 + static_cast<int>(std::count(text.begin(), text.begin() + upto, '\n'));
        throw ParseError(std::string("checkpoint JSON: ") + e.what(), line);
    }

    Checkpoint ckpt;
    try {
        ckpt.meta.format_version = doc.at("format_version").get<int>();
        if (ckpt.meta.format_version != kCheckpointFormatVersion)
            throw ConfigError("checkpoint format_version " +
                              std::to_string(ckpt.meta.format_version) + " unsupported (want " +
                              std::to_string(kCheckpointFormatVersion) + "): " + path);
        const json& meta = doc.at("meta");
        ckpt.meta.stage = meta.at("stage").get<std::string>();
        ckpt.meta.iteration = meta.at("iteration").get<long>();
        const json& rng = meta.at("rng");
        ckpt.meta.rng_seed = rng.at("seed").get<std::uint64_t>();
        ckpt.meta.rng_stream = rng.at("stream").get<std::string>();
        ckpt.meta.rng_counter = rng.at("counter").get<std::uint64_t>();
        ckpt.meta.parent_hash = meta.at("parent_hash").get<std::string>();
        ckpt.meta.stage_history = meta.at("stage_history").get<std::vector<std::string>>();

        const json& enc = doc.at("encoder");
        ckpt.encoder.d_x = enc.at("d_x").get<std::size_t>();
        ckpt.encoder.d_z = enc.at("d_z").get<std::size_t>();
        ckpt.encoder.seed = enc.at("seed").get<std::uint64_t>();
        ckpt.encoder.tanh_lift = enc.at("tanh").get<bool>();
        ckpt.encoder.lift_hash = enc.at("lift_hash").get<std::uint64_t>();

        ckpt.net_kind = doc.at("net_kind").get<std::string>();
        if (ckpt.net_kind == "decoder") {
            const json& mc = doc.at("net_config");
            ckpt.mlp_cfg.in = mc.at("in").get<std::size_t>();
            ckpt.mlp_cfg.hidden = mc.at("hidden").get<std::size_t>();
            ckpt.mlp_cfg.out = mc.at("out").get<std::size_t>();
            ckpt.mlp_cfg.depth = mc.at("depth").get<std::size_t>();
        } else if (ckpt.net_kind == "velocity" || ckpt.net_kind == "flowmap") {
            ckpt.net_cfg = net_cfg_from_json(doc.at("net_config"));
        } else {
            throw ConfigError("unknown checkpoint net_kind: " + ckpt.net_kind);
        }
        ckpt.params = arrays_from_json(doc.at("params"));
        ckpt.ema = arrays_from_json(doc.at("ema"));
        ckpt.config_snapshot = doc.at("config_snapshot").get<std::string>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("checkpoint structure: ") + e.what() + ": " + path);
    }
    return ckpt;
}

std::string file_hash_hex(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open for hashing: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    const std::string text = buf.str();
    const std::uint64_t h = fnv1a64(text);
    std::ostringstream hex;
    hex << std::hex;
    hex.width(16);
    hex.fill('0');
    hex << h;
    return hex.str();
}

}  // namespace mflab
