#include "swinmil/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace swinmil {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

long parse_int(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const long out = std::stol(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw std::invalid_argument("config: key '" + key + "' wants an integer, got '" + v + "'");
    }
}

double parse_real(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const double out = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw std::invalid_argument("config: key '" + key + "' wants a number, got '" + v + "'");
    }
}

std::vector<std::string> split_commas(const std::string& v) {
    std::vector<std::string> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(trim(item));
    return out;
}

std::vector<Index> parse_index_list(const std::string& key, const std::string& v) {
    std::vector<Index> out;
    for (const auto& item : split_commas(v)) out.push_back(parse_int(key, item));
    return out;
}

std::vector<double> parse_real_list(const std::string& key, const std::string& v) {
    std::vector<double> out;
    for (const auto& item : split_commas(v)) out.push_back(parse_real(key, item));
    return out;
}

std::string fmt_real(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

template <typename T>
std::string join(const std::vector<T>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ",";
        if constexpr (std::is_floating_point_v<T>) {
            out += fmt_real(v[i]);
        } else {
            out += std::to_string(v[i]);
        }
    }
    return out;
}

}  // namespace

RunConfig RunConfig::desk() { return RunConfig{}; }

RunConfig RunConfig::paper_faithful() {
    RunConfig cfg;
    cfg.model = ModelConfig::swin_t();
    cfg.train.lr = 1e-6;
    cfg.train.side_lr_ratio = 0.01;
    cfg.train.weight_decay = 5e-4;
    cfg.train.grad_clip_norm = 0.0;  // published run: plain Adam
    cfg.train.batch_size = 4;
    cfg.train.epochs = 60;
    return cfg;
}

void RunConfig::set_key(const std::string& key, const std::string& value) {
    EncoderConfig& e = model.encoder;
    HeadConfig& h = model.head;
    TrainConfig& t = train;
    if (key == "patch_size") {
        e.patch_size = parse_int(key, value);
    } else if (key == "in_channels") {
        e.in_channels = parse_int(key, value);
    } else if (key == "embed_dim") {
        e.embed_dim = parse_int(key, value);
    } else if (key == "depths") {
        e.depths = parse_index_list(key, value);
    } else if (key == "num_heads") {
        e.num_heads = parse_index_list(key, value);
    } else if (key == "window_size") {
        e.window_size = parse_int(key, value);
    } else if (key == "mlp_ratio") {
        e.mlp_ratio = parse_real(key, value);
    } else if (key == "rel_pos_bias") {
        const long v = parse_int(key, value);
        if (v != 0 && v != 1) throw std::invalid_argument("config: rel_pos_bias must be 0 or 1");
        e.use_relative_position_bias = (v == 1);
    } else if (key == "norm_eps") {
        e.norm_eps = parse_real(key, value);
    } else if (key == "gm_r") {
        h.r = parse_real(key, value);
    } else if (key == "fusion_weights") {
        h.fusion_weights = parse_real_list(key, value);
    } else if (key == "clamp_eps") {
        h.clamp_eps = parse_real(key, value);
    } else if (key == "lr") {
        t.lr = parse_real(key, value);
    } else if (key == "side_lr_ratio") {
        t.side_lr_ratio = parse_real(key, value);
    } else if (key == "weight_decay") {
        t.weight_decay = parse_real(key, value);
    } else if (key == "grad_clip_norm") {
        t.grad_clip_norm = parse_real(key, value);
    } else if (key == "batch_size") {
        t.batch_size = static_cast<int>(parse_int(key, value));
    } else if (key == "epochs") {
        t.epochs = static_cast<int>(parse_int(key, value));
    } else if (key == "seed") {
        t.seed = static_cast<std::uint64_t>(parse_int(key, value));
    } else if (key == "threshold") {
        threshold = parse_real(key, value);
    } else {
        throw std::invalid_argument("config: unknown key '" + key + "'");
    }
}

std::string RunConfig::to_key_values() const {
    std::ostringstream os;
    os << "patch_size = " << model.encoder.patch_size << "\n";
    os << "in_channels = " << model.encoder.in_channels << "\n";
    os << "embed_dim = " << model.encoder.embed_dim << "\n";
    os << "depths = " << join(model.encoder.depths) << "\n";
    os << "num_heads = " << join(model.encoder.num_heads) << "\n";
    os << "window_size = " << model.encoder.window_size << "\n";
    os << "mlp_ratio = " << fmt_real(model.encoder.mlp_ratio) << "\n";
    os << "rel_pos_bias = " << (model.encoder.use_relative_position_bias ? 1 : 0) << "\n";
    os << "norm_eps = " << fmt_real(model.encoder.norm_eps) << "\n";
    os << "gm_r = " << fmt_real(model.head.r) << "\n";
    os << "fusion_weights = " << join(model.head.fusion_weights) << "\n";
    os << "clamp_eps = " << fmt_real(model.head.clamp_eps) << "\n";
    os << "lr = " << fmt_real(train.lr) << "\n";
    os << "side_lr_ratio = " << fmt_real(train.side_lr_ratio) << "\n";
    os << "weight_decay = " << fmt_real(train.weight_decay) << "\n";
    os << "grad_clip_norm = " << fmt_real(train.grad_clip_norm) << "\n";
    os << "batch_size = " << train.batch_size << "\n";
    os << "epochs = " << train.epochs << "\n";
    os << "seed = " << train.seed << "\n";
    os << "threshold = " << fmt_real(threshold) << "\n";
    return os.str();
}

RunConfig RunConfig::from_key_values(const std::string& text) {
    RunConfig cfg;
    std::istringstream is(text);
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        const std::string stripped = trim(line);
        if (stripped.empty() || stripped[0] == '#') continue;
        const std::size_t eq = stripped.find('=');
        if (eq == std::string::npos) {
            throw std::invalid_argument("config: line " + std::to_string(line_no) +
                                        " is not 'key = value': " + stripped);
        }
        cfg.set_key(trim(stripped.substr(0, eq)), trim(stripped.substr(eq + 1)));
    }
    return cfg;
}

RunConfig load_config_file(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("load_config_file: cannot open " + path.string());
    std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return RunConfig::from_key_values(text);
}

void set_stage_count(RunConfig& cfg, int stages) {
    if (stages < 2 || stages > 4) {
        throw std::invalid_argument("set_stage_count: stages must be 2, 3, or 4");
    }
    static const std::vector<Index> kHeads{3, 6, 12, 24};
    cfg.model.encoder.depths.assign(static_cast<std::size_t>(stages), 2);
    cfg.model.encoder.num_heads.assign(kHeads.begin(), kHeads.begin() + stages);
    if (stages == 3) {
        cfg.model.head.fusion_weights = {0.3, 0.4, 0.3};
    } else {
        cfg.model.head.fusion_weights.assign(static_cast<std::size_t>(stages),
                                             1.0 / static_cast<double>(stages));
    }
}

}  // namespace swinmil
