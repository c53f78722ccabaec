#include "physiome/config.hpp"

#include "physiome/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace physiome {

using nlohmann::json;

std::vector<int> EvaluationConfig::active_folds() const {
    if (!run_folds.empty()) return run_folds;
    std::vector<int> all(static_cast<std::size_t>(folds));
    for (int k = 0; k < folds; ++k) all[static_cast<std::size_t>(k)] = k;
    return all;
}

void RunConfig::propagate_seed() {
    dp.seed = seed;
    physiome.seed = seed;
    probe.seed = seed;
}

void RunConfig::validate() const {
    data.validate();
    dp.net.validate();
    physiome.validate();
    if (static_cast<int>(modality_names.size()) != data.modalities) {
        throw ConfigError("modality_names has " + std::to_string(modality_names.size()) + " entries for " +
                          std::to_string(data.modalities) + " modalities");
    }
    if (data.modalities > 6) throw ConfigError("at most 6 modalities are supported");
    if (dp.net.sample_rate_hz != data.sample_rate_hz || dp.net.window_sec != data.window_sec) {
        throw ConfigError("neuronet sample_rate_hz/window_sec must match the data section");
    }
    if (dp.epochs < 0 || dp.batch_size < 2) throw ConfigError("dp_neuronet epochs must be >= 0 and batch_size >= 2");
    if (!(dp.optimizer.learning_rate > 0.0)) throw ConfigError("dp_neuronet learning_rate must be > 0");
    if (!(physiome.optimizer.learning_rate > 0.0)) throw ConfigError("physiome learning_rate must be > 0");
    if (probe.epochs < 1 || probe.batch_size < 1) throw ConfigError("probe epochs and batch_size must be >= 1");
    if (!(probe.optimizer.learning_rate > 0.0)) throw ConfigError("probe learning_rate must be > 0");
    if (evaluation.folds < 2) throw ConfigError("evaluation.folds must be >= 2");
    if (!(evaluation.pretrain_fraction > 0.0 && evaluation.pretrain_fraction < 1.0)) {
        throw ConfigError("evaluation.pretrain_fraction must be in (0, 1)");
    }
    for (int k : evaluation.run_folds) {
        if (k < 0 || k >= evaluation.folds) throw ConfigError("run_folds entry " + std::to_string(k) + " out of range");
    }
    if (evaluation.strategy == RestorationStrategy::kMemoryToken &&
        physiome.training_strategy != RestorationStrategy::kMemoryToken) {
        throw ConfigError("evaluation.strategy memory_token needs physiome.training_strategy memory_token");
    }
    if (evaluation.strategy == RestorationStrategy::kRestorationDecoder &&
        physiome.training_strategy != RestorationStrategy::kRestorationDecoder) {
        throw ConfigError("evaluation.strategy restoration_decoder needs a restoration_decoder-trained model");
    }
}

std::vector<std::string> preset_names() { return {"synthetic", "sleep", "vital"}; }

namespace {

void table_settings(RunConfig& c, double frame_sec, double step_sec, ag::Index mm_depth, ag::Index dec_depth) {
    auto& net = c.dp.net;
    net.frames = {frame_sec, step_sec};
    net.sample_rate_hz = 100.0;
    net.window_sec = 30.0;
    net.frame_channels = 64;
    net.encoder_dim = 512;
    net.encoder_depth = 8;
    // The listed 6 heads do not divide 512; 8 is used.
    net.encoder_heads = 8;
    net.decoder_dim = 256;
    net.decoder_depth = 8;
    net.decoder_heads = 4;
    net.projection_hidden = {1024, 512};
    net.mask_ratio = 0.8;
    net.balance = 1.0;
    c.dp.epochs = 50;
    c.dp.batch_size = 128;
    c.dp.optimizer.learning_rate = 1e-5;

    auto& p = c.physiome;
    p = PhysioMEConfig{};
    p.mm_depth = mm_depth;
    p.decoder_depth = dec_depth;

    c.probe = ProbeConfig{};
    c.data.sample_rate_hz = 100.0;
    c.data.window_sec = 30.0;
}

}  // namespace

RunConfig preset_config(const std::string& name) {
    RunConfig c;
    c.preset = name;
    c.output_dir = "runs/" + name;
    if (name == "synthetic") {
        c.modality_names = {"m0", "m1", "m2"};
        c.data = SyntheticConfig{};

        auto& net = c.dp.net;
        net.frames = {1.0, 0.5};
        net.sample_rate_hz = c.data.sample_rate_hz;
        net.window_sec = c.data.window_sec;
        net.frame_channels = 8;
        net.encoder_dim = 32;
        net.encoder_depth = 2;
        net.encoder_heads = 4;
        net.decoder_dim = 32;
        net.decoder_depth = 1;
        net.decoder_heads = 4;
        net.projection_hidden = {64, 32};
        c.dp.epochs = 3;
        c.dp.batch_size = 64;
        c.dp.optimizer.learning_rate = 1e-3;

        auto& p = c.physiome;
        p.mm_dim = 64;
        p.mm_depth = 2;
        p.mm_heads = 4;
        p.decoder_dim = 32;
        p.decoder_depth = 1;
        p.decoder_heads = 4;
        p.restoration_dim = 64;
        p.restoration_depth = 2;
        p.restoration_heads = 4;
        p.projection_hidden = {64, 32};
        p.epochs = 10;
        p.batch_size = 32;
        p.optimizer.learning_rate = 1e-3;

        c.probe.epochs = 100;
        c.probe.batch_size = 64;
        c.probe.optimizer.learning_rate = 1e-2;
    } else if (name == "sleep") {
        c.modality_names = {"eeg_fpz_cz", "eeg_pz_cz", "eog"};
        c.data.n_classes = 5;
        table_settings(c, 4.0, 1.0, 6, 4);
    } else if (name == "vital") {
        c.modality_names = {"abp", "ecg", "ppg"};
        c.data.n_classes = 2;
        table_settings(c, 3.0, 3.0, 4, 3);
    } else {
        throw ConfigError("unknown preset '" + name + "' (expected synthetic, sleep or vital)");
    }
    c.propagate_seed();
    return c;
}

namespace {

json optimizer_json(const optim::AdamWConfig& o) {
    return json{{"learning_rate", o.learning_rate},
                {"betas", {o.beta1, o.beta2}},
                {"eps", o.eps},
                {"weight_decay", o.weight_decay}};
}

json augment_json(const AugmentationPipeline& p) {
    json arr = json::array();
    for (const auto& s : p.steps()) arr.push_back({{"kind", to_string(s.kind)}, {"low", s.low}, {"high", s.high}});
    return arr;
}

json to_tree(const RunConfig& c) {
    json j;
    j["preset"] = c.preset;
    j["seed"] = c.seed;
    j["output_dir"] = c.output_dir;
    j["modality_names"] = c.modality_names;

    const auto& d = c.data;
    j["data"] = {{"n_subjects", d.n_subjects},
                 {"n_classes", d.n_classes},
                 {"modalities", d.modalities},
                 {"latent_dim", d.latent_dim},
                 {"n_samples", d.n_samples},
                 {"noise_std", d.noise_std},
                 {"window_sec", d.window_sec},
                 {"sample_rate_hz", d.sample_rate_hz},
                 {"frequency_jitter", d.frequency_jitter},
                 {"mixing", d.mixing == MixingMode::kShared ? "shared" : "independent"},
                 {"seed", d.seed}};

    const auto& n = c.dp.net;
    j["neuronet"] = {{"frame_size_sec", n.frames.frame_size_sec},
                     {"overlap_step_sec", n.frames.overlap_step_sec},
                     {"sample_rate_hz", n.sample_rate_hz},
                     {"window_sec", n.window_sec},
                     {"frame_channels", n.frame_channels},
                     {"encoder_dim", n.encoder_dim},
                     {"encoder_depth", n.encoder_depth},
                     {"encoder_heads", n.encoder_heads},
                     {"decoder_dim", n.decoder_dim},
                     {"decoder_depth", n.decoder_depth},
                     {"decoder_heads", n.decoder_heads},
                     {"projection_hidden", n.projection_hidden},
                     {"mask_ratio", n.mask_ratio},
                     {"temperature", n.temperature},
                     {"balance", n.balance}};

    j["dp_neuronet"] = {{"epochs", c.dp.epochs},
                        {"batch_size", c.dp.batch_size},
                        {"optimizer", optimizer_json(c.dp.optimizer)},
                        {"internal_contrastive", c.dp.internal_contrastive},
                        {"dual_path_weight", c.dp.dual_path_weight},
                        {"first_path", augment_json(c.dp.first_path)},
                        {"second_path", augment_json(c.dp.second_path)}};

    const auto& p = c.physiome;
    j["physiome"] = {{"mm_dim", p.mm_dim},
                     {"mm_depth", p.mm_depth},
                     {"mm_heads", p.mm_heads},
                     {"decoder_dim", p.decoder_dim},
                     {"decoder_depth", p.decoder_depth},
                     {"decoder_heads", p.decoder_heads},
                     {"restoration_dim", p.restoration_dim},
                     {"restoration_depth", p.restoration_depth},
                     {"restoration_heads", p.restoration_heads},
                     {"projection_hidden", p.projection_hidden},
                     {"lora_rank", p.lora_rank},
                     {"lora_alpha", p.lora_alpha},
                     {"lora_dropout", p.lora_dropout},
                     {"mask_ratio", p.mask_ratio},
                     {"drop_prob", p.drop_prob},
                     {"temperature", p.temperature},
                     {"alpha", p.alpha},
                     {"beta", p.beta},
                     {"gamma", p.gamma},
                     {"drop_token_mode", to_string(p.drop_token_mode)},
                     {"training_strategy", to_string(p.training_strategy)},
                     {"restoration_context", to_string(p.restoration_context)},
                     {"restoration_gradient", p.restoration_gradient},
                     {"intra_target_gradient", p.intra_target_gradient},
                     {"epochs", p.epochs},
                     {"batch_size", p.batch_size},
                     {"optimizer", optimizer_json(p.optimizer)}};

    j["probe"] = {{"epochs", c.probe.epochs},
                  {"batch_size", c.probe.batch_size},
                  {"optimizer", optimizer_json(c.probe.optimizer)}};

    j["evaluation"] = {{"folds", c.evaluation.folds},
                       {"pretrain_fraction", c.evaluation.pretrain_fraction},
                       {"run_folds", c.evaluation.run_folds},
                       {"strategy", to_string(c.evaluation.strategy)}};
    return j;
}

// Overlays `patch` onto `base`; every key of the patch must already exist
// with a compatible type. Arrays are replaced whole.
void strict_merge(json& base, const json& patch, const std::string& path) {
    if (!patch.is_object()) throw ConfigError("'" + path + "' must be a table");
    for (auto it = patch.begin(); it != patch.end(); ++it) {
        const std::string key = path.empty() ? it.key() : path + "." + it.key();
        if (!base.contains(it.key())) throw ConfigError("unknown config key '" + key + "'");
        json& slot = base[it.key()];
        const json& v = it.value();
        if (slot.is_object()) {
            strict_merge(slot, v, key);
        } else if (slot.is_number() && v.is_number()) {
            if ((slot.is_number_integer() || slot.is_number_unsigned()) && v.is_number_float()) {
                const double d = v.get<double>();
                if (d != std::floor(d)) throw ConfigError("'" + key + "' must be an integer");
                slot = static_cast<std::int64_t>(d);
            } else {
                slot = v;
            }
        } else if (slot.type() == v.type() || (slot.is_array() && v.is_array())) {
            slot = v;
        } else {
            throw ConfigError("'" + key + "' has the wrong type");
        }
    }
}

template <class T>
T get(const json& j, const char* key, const std::string& where) {
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError("invalid value for '" + where + "." + key + "'");
    }
}

ag::Index get_index(const json& j, const char* key, const std::string& where) {
    return static_cast<ag::Index>(get<std::int64_t>(j, key, where));
}

optim::AdamWConfig read_optimizer(const json& j, const std::string& where) {
    optim::AdamWConfig o;
    o.learning_rate = get<double>(j, "learning_rate", where);
    const auto betas = get<std::vector<double>>(j, "betas", where);
    if (betas.size() != 2) throw ConfigError("'" + where + ".betas' needs two values");
    o.beta1 = betas[0];
    o.beta2 = betas[1];
    o.eps = get<double>(j, "eps", where);
    o.weight_decay = get<double>(j, "weight_decay", where);
    if (!(o.beta1 >= 0.0 && o.beta1 < 1.0 && o.beta2 >= 0.0 && o.beta2 < 1.0)) {
        throw ConfigError("'" + where + ".betas' must lie in [0, 1)");
    }
    if (!(o.eps > 0.0) || o.weight_decay < 0.0) throw ConfigError("'" + where + "' eps/weight_decay out of range");
    return o;
}

AugmentationPipeline read_augment(const json& arr, const std::string& where) {
    if (!arr.is_array()) throw ConfigError("'" + where + "' must be an array");
    std::vector<Augmentation> steps;
    for (const auto& s : arr) {
        if (!s.is_object()) throw ConfigError("'" + where + "' entries must be tables");
        for (auto it = s.begin(); it != s.end(); ++it) {
            if (it.key() != "kind" && it.key() != "low" && it.key() != "high") {
                throw ConfigError("unknown config key '" + where + "." + it.key() + "'");
            }
        }
        Augmentation a;
        try {
            a.kind = parse_augment_kind(get<std::string>(s, "kind", where));
        } catch (const std::invalid_argument& e) {
            throw ConfigError(e.what());
        }
        a.low = s.contains("low") ? get<double>(s, "low", where) : 0.0;
        a.high = s.contains("high") ? get<double>(s, "high", where) : a.low;
        steps.push_back(a);
    }
    return AugmentationPipeline(std::move(steps));
}

template <class Fn>
auto wrap(Fn&& fn) {
    try {
        return fn();
    } catch (const ConfigError&) {
        throw;
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
}

RunConfig from_tree(const json& j) {
    RunConfig c;
    c.preset = get<std::string>(j, "preset", "");
    c.seed = get<std::uint64_t>(j, "seed", "");
    c.output_dir = get<std::string>(j, "output_dir", "");
    c.modality_names = get<std::vector<std::string>>(j, "modality_names", "");

    const json& d = j.at("data");
    c.data.n_subjects = get<int>(d, "n_subjects", "data");
    c.data.n_classes = get<int>(d, "n_classes", "data");
    c.data.modalities = get<int>(d, "modalities", "data");
    c.data.latent_dim = get<int>(d, "latent_dim", "data");
    c.data.n_samples = get<int>(d, "n_samples", "data");
    c.data.noise_std = get<double>(d, "noise_std", "data");
    c.data.window_sec = get<double>(d, "window_sec", "data");
    c.data.sample_rate_hz = get<double>(d, "sample_rate_hz", "data");
    c.data.frequency_jitter = get<double>(d, "frequency_jitter", "data");
    const auto mixing = get<std::string>(d, "mixing", "data");
    if (mixing == "independent") {
        c.data.mixing = MixingMode::kIndependent;
    } else if (mixing == "shared") {
        c.data.mixing = MixingMode::kShared;
    } else {
        throw ConfigError("data.mixing must be independent or shared, got '" + mixing + "'");
    }
    c.data.seed = get<std::uint64_t>(d, "seed", "data");

    const json& n = j.at("neuronet");
    auto& net = c.dp.net;
    net.frames.frame_size_sec = get<double>(n, "frame_size_sec", "neuronet");
    net.frames.overlap_step_sec = get<double>(n, "overlap_step_sec", "neuronet");
    net.sample_rate_hz = get<double>(n, "sample_rate_hz", "neuronet");
    net.window_sec = get<double>(n, "window_sec", "neuronet");
    net.frame_channels = get_index(n, "frame_channels", "neuronet");
    net.encoder_dim = get_index(n, "encoder_dim", "neuronet");
    net.encoder_depth = get_index(n, "encoder_depth", "neuronet");
    net.encoder_heads = get_index(n, "encoder_heads", "neuronet");
    net.decoder_dim = get_index(n, "decoder_dim", "neuronet");
    net.decoder_depth = get_index(n, "decoder_depth", "neuronet");
    net.decoder_heads = get_index(n, "decoder_heads", "neuronet");
    net.projection_hidden = get<std::vector<ag::Index>>(n, "projection_hidden", "neuronet");
    net.mask_ratio = get<double>(n, "mask_ratio", "neuronet");
    net.temperature = get<double>(n, "temperature", "neuronet");
    net.balance = get<double>(n, "balance", "neuronet");

    const json& dp = j.at("dp_neuronet");
    c.dp.epochs = get<int>(dp, "epochs", "dp_neuronet");
    c.dp.batch_size = get<int>(dp, "batch_size", "dp_neuronet");
    c.dp.optimizer = read_optimizer(dp.at("optimizer"), "dp_neuronet.optimizer");
    c.dp.internal_contrastive = get<bool>(dp, "internal_contrastive", "dp_neuronet");
    c.dp.dual_path_weight = get<double>(dp, "dual_path_weight", "dp_neuronet");
    c.dp.first_path = read_augment(dp.at("first_path"), "dp_neuronet.first_path");
    c.dp.second_path = read_augment(dp.at("second_path"), "dp_neuronet.second_path");

    const json& p = j.at("physiome");
    auto& pm = c.physiome;
    pm.mm_dim = get_index(p, "mm_dim", "physiome");
    pm.mm_depth = get_index(p, "mm_depth", "physiome");
    pm.mm_heads = get_index(p, "mm_heads", "physiome");
    pm.decoder_dim = get_index(p, "decoder_dim", "physiome");
    pm.decoder_depth = get_index(p, "decoder_depth", "physiome");
    pm.decoder_heads = get_index(p, "decoder_heads", "physiome");
    pm.restoration_dim = get_index(p, "restoration_dim", "physiome");
    pm.restoration_depth = get_index(p, "restoration_depth", "physiome");
    pm.restoration_heads = get_index(p, "restoration_heads", "physiome");
    pm.projection_hidden = get<std::vector<ag::Index>>(p, "projection_hidden", "physiome");
    pm.lora_rank = get<int>(p, "lora_rank", "physiome");
    pm.lora_alpha = get<double>(p, "lora_alpha", "physiome");
    pm.lora_dropout = get<double>(p, "lora_dropout", "physiome");
    pm.mask_ratio = get<double>(p, "mask_ratio", "physiome");
    pm.drop_prob = get<double>(p, "drop_prob", "physiome");
    pm.temperature = get<double>(p, "temperature", "physiome");
    pm.alpha = get<double>(p, "alpha", "physiome");
    pm.beta = get<double>(p, "beta", "physiome");
    pm.gamma = get<double>(p, "gamma", "physiome");
    pm.drop_token_mode = parse_drop_token_mode(get<std::string>(p, "drop_token_mode", "physiome"));
    pm.training_strategy = parse_restoration_strategy(get<std::string>(p, "training_strategy", "physiome"));
    pm.restoration_context = parse_restoration_context(get<std::string>(p, "restoration_context", "physiome"));
    pm.restoration_gradient = get<bool>(p, "restoration_gradient", "physiome");
    pm.intra_target_gradient = get<bool>(p, "intra_target_gradient", "physiome");
    pm.epochs = get<int>(p, "epochs", "physiome");
    pm.batch_size = get<int>(p, "batch_size", "physiome");
    pm.optimizer = read_optimizer(p.at("optimizer"), "physiome.optimizer");

    const json& pr = j.at("probe");
    c.probe.epochs = get<int>(pr, "epochs", "probe");
    c.probe.batch_size = get<int>(pr, "batch_size", "probe");
    c.probe.optimizer = read_optimizer(pr.at("optimizer"), "probe.optimizer");

    const json& ev = j.at("evaluation");
    c.evaluation.folds = get<int>(ev, "folds", "evaluation");
    c.evaluation.pretrain_fraction = get<double>(ev, "pretrain_fraction", "evaluation");
    c.evaluation.run_folds = get<std::vector<int>>(ev, "run_folds", "evaluation");
    c.evaluation.strategy = parse_restoration_strategy(get<std::string>(ev, "strategy", "evaluation"));

    c.propagate_seed();
    wrap([&] {
        c.validate();
        return 0;
    });
    return c;
}

RunConfig merge_onto_preset(const json& patch) {
    std::string preset = "synthetic";
    if (patch.contains("preset")) {
        if (!patch["preset"].is_string()) throw ConfigError("'preset' must be a string");
        preset = patch["preset"].get<std::string>();
    }
    json base = to_tree(preset_config(preset));
    strict_merge(base, patch, "");
    return from_tree(base);
}

// ---- TOML subset -------------------------------------------------------

class TomlReader {
public:
    TomlReader(const std::string& text, int line) : s_(text), line_(line) {}

    json value() {
        skip_ws();
        if (pos_ >= s_.size()) fail("missing value");
        const char c = s_[pos_];
        if (c == '"' || c == '\'') return json(string());
        if (c == '[') return array();
        if (c == '{') return inline_table();
        return scalar();
    }

    void expect_end() {
        skip_ws();
        if (pos_ < s_.size() && s_[pos_] != '#') fail("unexpected trailing text");
    }

    std::string key() {
        skip_ws();
        if (pos_ < s_.size() && (s_[pos_] == '"' || s_[pos_] == '\'')) return string();
        const std::size_t start = pos_;
        while (pos_ < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '_' ||
                                    s_[pos_] == '-' || s_[pos_] == '.')) {
            ++pos_;
        }
        if (start == pos_) fail("expected a key");
        return s_.substr(start, pos_ - start);
    }

    void expect(char c) {
        skip_ws();
        if (pos_ >= s_.size() || s_[pos_] != c) fail(std::string("expected '") + c + "'");
        ++pos_;
    }

    [[noreturn]] void fail(const std::string& what) const {
        throw ConfigError("config line " + std::to_string(line_) + ": " + what);
    }

private:
    void skip_ws() {
        while (pos_ < s_.size() && (s_[pos_] == ' ' || s_[pos_] == '\t')) ++pos_;
    }

    std::string string() {
        const char quote = s_[pos_++];
        std::string out;
        while (pos_ < s_.size() && s_[pos_] != quote) {
            char c = s_[pos_++];
            if (c == '\\' && quote == '"' && pos_ < s_.size()) {
                const char e = s_[pos_++];
                switch (e) {
                    case 'n': c = '\n'; break;
                    case 't': c = '\t'; break;
                    case '\\': c = '\\'; break;
                    case '"': c = '"'; break;
                    default: fail(std::string("unsupported escape \\") + e);
                }
            }
            out.push_back(c);
        }
        if (pos_ >= s_.size()) fail("unterminated string");
        ++pos_;
        return out;
    }

    json array() {
        ++pos_;
        json arr = json::array();
        skip_ws();
        if (pos_ < s_.size() && s_[pos_] == ']') {
            ++pos_;
            return arr;
        }
        while (true) {
            arr.push_back(value());
            skip_ws();
            if (pos_ >= s_.size()) fail("unterminated array");
            if (s_[pos_] == ',') {
                ++pos_;
                skip_ws();
                if (pos_ < s_.size() && s_[pos_] == ']') {
                    ++pos_;
                    return arr;
                }
                continue;
            }
            if (s_[pos_] == ']') {
                ++pos_;
                return arr;
            }
            fail("expected ',' or ']'");
        }
    }

    json inline_table() {
        ++pos_;
        json obj = json::object();
        skip_ws();
        if (pos_ < s_.size() && s_[pos_] == '}') {
            ++pos_;
            return obj;
        }
        while (true) {
            const std::string k = key();
            expect('=');
            obj[k] = value();
            skip_ws();
            if (pos_ >= s_.size()) fail("unterminated inline table");
            if (s_[pos_] == ',') {
                ++pos_;
                continue;
            }
            if (s_[pos_] == '}') {
                ++pos_;
                return obj;
            }
            fail("expected ',' or '}'");
        }
    }

    json scalar() {
        const std::size_t start = pos_;
        while (pos_ < s_.size() && s_[pos_] != ',' && s_[pos_] != ']' && s_[pos_] != '}' && s_[pos_] != '#' &&
               s_[pos_] != ' ' && s_[pos_] != '\t') {
            ++pos_;
        }
        std::string tok = s_.substr(start, pos_ - start);
        if (tok == "true") return true;
        if (tok == "false") return false;
        tok.erase(std::remove(tok.begin(), tok.end(), '_'), tok.end());
        if (tok.empty()) fail("missing value");
        const bool integral = tok.find_first_of(".eE") == std::string::npos || tok.rfind("0x", 0) == 0;
        try {
            std::size_t used = 0;
            if (integral) {
                const long long v = std::stoll(tok, &used, 0);
                if (used == tok.size()) return v;
            } else {
                const double v = std::stod(tok, &used);
                if (used == tok.size()) return v;
            }
        } catch (const std::exception&) {
        }
        fail("cannot parse value '" + tok + "'");
    }

    const std::string& s_;
    std::size_t pos_ = 0;
    int line_;
};

json* descend(json& root, const std::string& dotted, const TomlReader& r) {
    json* node = &root;
    std::size_t start = 0;
    while (true) {
        const std::size_t dot = dotted.find('.', start);
        const std::string part = dotted.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (part.empty()) r.fail("empty key segment in '" + dotted + "'");
        if (node->is_null()) *node = json::object();
        if (!node->is_object()) r.fail("'" + dotted + "' redefines a value as a table");
        node = &(*node)[part];
        if (dot == std::string::npos) return node;
        start = dot + 1;
    }
}

json parse_toml(const std::string& text) {
    json root = json::object();
    json* table = &root;
    std::istringstream in(text);
    std::string raw;
    int line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        if (!raw.empty() && raw.back() == '\r') raw.pop_back();
        const auto first = raw.find_first_not_of(" \t");
        if (first == std::string::npos || raw[first] == '#') continue;
        TomlReader r(raw, line_no);
        if (raw[first] == '[') {
            const auto close = raw.find(']', first);
            if (close == std::string::npos) r.fail("unterminated table header");
            std::string name = raw.substr(first + 1, close - first - 1);
            name.erase(std::remove_if(name.begin(), name.end(), [](char c) { return c == ' ' || c == '\t'; }),
                       name.end());
            const auto rest = raw.find_first_not_of(" \t", close + 1);
            if (rest != std::string::npos && raw[rest] != '#') r.fail("unexpected text after table header");
            table = descend(root, name, r);
            if (table->is_null()) *table = json::object();
            continue;
        }
        const std::string k = r.key();
        r.expect('=');
        json v = r.value();
        r.expect_end();
        json* slot = descend(*table, k, r);
        if (!slot->is_null()) r.fail("duplicate key '" + k + "'");
        *slot = std::move(v);
    }
    return root;
}

}  // namespace

std::string to_json(const RunConfig& cfg) { return to_tree(cfg).dump(2); }

RunConfig from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config JSON does not parse: ") + e.what());
    }
    return merge_onto_preset(j);
}

RunConfig parse_config_text(const std::string& text) { return merge_onto_preset(parse_toml(text)); }

RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str());
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like section.key=value");
    const std::string patch_line = assignment.substr(0, eq) + " = " + assignment.substr(eq + 1);
    json patch = parse_toml(patch_line);
    json base = to_tree(cfg);
    if (patch.contains("preset")) throw ConfigError("preset cannot be overridden; pass it in the config file");
    strict_merge(base, patch, "");
    cfg = from_tree(base);
}

}  // namespace physiome
