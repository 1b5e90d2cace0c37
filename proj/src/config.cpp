#include "mflab/config.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

namespace mflab {

namespace {

std::size_t as_size(const TomlValue& v, const std::string& key) {
    const long n = v.as_integer();
    if (n < 0) throw ConfigError("config key '" + key + "' must be nonnegative");
    return static_cast<std::size_t>(n);
}

std::uint64_t as_seed(const TomlValue& v, const std::string& key) {
    const long n = v.as_integer();
    if (n < 0) throw ConfigError("config key '" + key + "' must be nonnegative");
    return static_cast<std::uint64_t>(n);
}

[[noreturn]] void unknown_key(const std::string& key, const std::string& where) {
    throw ConfigError("unknown config key '" + key + "' in " + where);
}

void apply_dataset(DatasetSpec& d, const TomlTable& t) {
    for (const auto& [key, val] : t.entries) {
        if (key == "path")
            d.path = val.as_string();
        else if (key == "modes")
            d.modes = as_size(val, key);
        else if (key == "atoms")
            d.atoms = as_size(val, key);
        else if (key == "seed")
            d.seed = as_seed(val, key);
        else if (key == "radius")
            d.radius = val.as_number();
        else if (key == "sigma")
            d.sigma = val.as_number();
        else
            unknown_key(key, "[dataset]");
    }
    if (!d.path.empty() && t.entries.size() > 1)
        throw ConfigError("[dataset] path excludes the generator keys");
}

void apply_encoder(EncoderSettings& e, const TomlTable& t) {
    for (const auto& [key, val] : t.entries) {
        if (key == "d_z")
            e.d_z = as_size(val, key);
        else if (key == "seed")
            e.seed = as_seed(val, key);
        else if (key == "tanh")
            e.tanh_lift = val.as_bool();
        else
            unknown_key(key, "[encoder]");
    }
}

void apply_decoder(DecoderConfig& d, const TomlTable& t) {
    for (const auto& [key, val] : t.entries) {
        if (key == "hidden")
            d.hidden = as_size(val, key);
        else if (key == "depth")
            d.depth = as_size(val, key);
        else if (key == "iterations")
            d.iterations = as_size(val, key);
        else if (key == "lr")
            d.lr = val.as_number();
        else if (key == "target_rmse")
            d.target_rmse = val.as_number();
        else
            unknown_key(key, "[decoder]");
    }
}

void apply_net(ExperimentConfig& c, const TomlTable& t) {
    for (const auto& [key, val] : t.entries) {
        if (key == "hidden")
            c.net_hidden = as_size(val, key);
        else if (key == "depth")
            c.net_depth = as_size(val, key);
        else if (key == "frequencies")
            c.net_frequencies = as_size(val, key);
        else if (key == "max_period")
            c.net_max_period = val.as_number();
        else if (key == "zero_final")
            c.net_zero_final = val.as_bool();
        else
            unknown_key(key, "[net]");
    }
}

void apply_train(TrainConfig& c, const TomlTable& t, const std::string& section) {
    for (const auto& [key, val] : t.entries) {
        if (key == "batch_size")
            c.batch_size = as_size(val, key);
        else if (key == "lr")
            c.lr = val.as_number();
        else if (key == "iterations")
            c.iterations = as_size(val, key);
        else if (key == "t_min")
            c.t_min = val.as_number();
        else if (key == "s_min")
            c.s_min = val.as_number();
        else if (key == "equal_time_fraction")
            c.equal_time_fraction = val.as_number();
        else if (key == "lambda")
            c.lambda = val.as_number();
        else if (key == "derivative")
            c.derivative = parse_deriv_mode(val.as_string());
        else if (key == "fd_delta")
            c.fd_delta = val.as_number();
        else if (key == "time_weight")
            c.time_weight = val.as_number();
        else if (key == "ema_beta")
            c.ema_beta = val.as_number();
        else if (key == "adam_beta1")
            c.adam_beta1 = val.as_number();
        else if (key == "adam_beta2")
            c.adam_beta2 = val.as_number();
        else if (key == "grad_norm_limit")
            c.grad_norm_limit = val.as_number();
        else if (key == "divergence_patience")
            c.divergence_patience = as_size(val, key);
        else if (key == "cmt_grid_points")
            c.cmt_grid_points = as_size(val, key);
        else if (key == "cmt_n_traj")
            c.cmt_n_traj = as_size(val, key);
        else if (key == "cmt_pairs_per_traj")
            c.cmt_pairs_per_traj = as_size(val, key);
        else
            unknown_key(key, "[" + section + "]");
    }
}

void apply_sample(SampleSettings& s, const TomlTable& t) {
    for (const auto& [key, val] : t.entries) {
        if (key == "n")
            s.n = as_size(val, key);
        else if (key == "nfe")
            s.nfe = val.as_integer();
        else if (key == "step_times")
            s.step_times = val.as_number_array();
        else if (key == "metrics_draws")
            s.metrics_draws = as_size(val, key);
        else
            unknown_key(key, "[sample]");
    }
}

}  // namespace

TrainConfig stage_defaults(const std::string& stage) {
    TrainConfig c;
    if (stage == "pretrain") {
        c.lr = 2e-4;
        c.iterations = 2000;
    } else if (stage == "cmt") {
        c.lr = 1e-4;
        c.iterations = 600;
    } else if (stage == "mfd") {
        c.lr = 1e-4;
        c.iterations = 1200;
        c.lambda = 1.0;
    } else if (stage == "mft") {
        c.lr = 1e-4;
        c.iterations = 800;
        c.lambda = 0.0;
    } else {
        throw ConfigError("unknown stage: " + stage);
    }
    return c;
}

NetConfig ExperimentConfig::make_net_config(std::size_t dim, int num_classes) const {
    NetConfig nc;
    nc.dim = dim;
    nc.hidden = net_hidden;
    nc.depth = net_depth;
    nc.num_classes = static_cast<std::size_t>(num_classes);
    nc.embed.num_frequencies = net_frequencies;
    nc.embed.max_period = net_max_period;
    nc.zero_final = net_zero_final;
    return nc;
}

void ExperimentConfig::validate() const {
    if (output_dir.empty()) throw ConfigError("output_dir must be set");
    if (!dataset.path.empty()) {
        if (!std::filesystem::exists(dataset.path))
            throw ConfigError("dataset file does not exist: " + dataset.path);
    } else {
        if (dataset.modes == 0) throw ConfigError("[dataset] modes must be positive");
        if (dataset.atoms == 0) throw ConfigError("[dataset] atoms must be positive");
        if (dataset.radius <= 0.0) throw ConfigError("[dataset] radius must be positive");
        if (dataset.sigma < 0.0) throw ConfigError("[dataset] sigma must be nonnegative");
    }
    if (encoder.d_z == 0) throw ConfigError("[encoder] d_z must be positive");
    if (decoder.hidden == 0 || decoder.depth < 2)
        throw ConfigError("[decoder] needs hidden >= 1 and depth >= 2");
    if (decoder.lr <= 0.0) throw ConfigError("[decoder] lr must be positive");
    if (net_hidden == 0 || net_depth < 2)
        throw ConfigError("[net] needs hidden >= 1 and depth >= 2");
    if (net_frequencies == 0) throw ConfigError("[net] frequencies must be positive");
    if (net_max_period <= 0.0) throw ConfigError("[net] max_period must be positive");
    if (sample.nfe < 1) throw ConfigError("[sample] nfe must be at least 1");
    if (pretrain) pretrain->validate();
    if (cmt) cmt->validate();
    if (mfd) mfd->validate();
    if (mft) mft->validate();
}

ExperimentConfig parse_experiment_config(const std::string& text) {
    const TomlDoc doc = parse_toml(text);
    ExperimentConfig c;
    c.source_text = text;

    for (const auto& [key, val] : doc.root.entries) {
        if (key == "seed")
            c.seed = as_seed(val, key);
        else if (key == "output_dir")
            c.output_dir = val.as_string();
        else
            unknown_key(key, "the top level");
    }

    for (const auto& [name, table] : doc.sections) {
        if (name == "dataset") {
            apply_dataset(c.dataset, table);
        } else if (name == "encoder") {
            apply_encoder(c.encoder, table);
        } else if (name == "decoder") {
            apply_decoder(c.decoder, table);
        } else if (name == "net") {
            apply_net(c, table);
        } else if (name == "pretrain" || name == "cmt" || name == "mfd" || name == "mft") {
            TrainConfig tc = stage_defaults(name);
            apply_train(tc, table, name);
            if (name == "pretrain")
                c.pretrain = tc;
            else if (name == "cmt")
                c.cmt = tc;
            else if (name == "mfd")
                c.mfd = tc;
            else
                c.mft = tc;
        } else if (name == "sample") {
            apply_sample(c.sample, table);
        } else {
            throw ConfigError("unknown config section [" + name + "]");
        }
    }
    return c;
}

ExperimentConfig load_experiment_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_experiment_config(buf.str());
}

}  // namespace mflab
