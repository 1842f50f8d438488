#include "dualdetr/config.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

namespace dualdetr {

std::string level_name(QueryLevel level) {
    switch (level) {
        case QueryLevel::Dual: return "dual";
        case QueryLevel::Instance: return "instance";
        case QueryLevel::Boundary: return "boundary";
    }
    return "dual";
}

std::string init_name(InitMode mode) {
    switch (mode) {
        case InitMode::Joint: return "joint";
        case InitMode::PositionOnly: return "position-only";
        case InitMode::Learned: return "learned";
    }
    return "joint";
}

std::string refine_name(RefineMode mode) {
    switch (mode) {
        case RefineMode::Parallel: return "parallel";
        case RefineMode::BoundaryFirst: return "boundary-first";
        case RefineMode::InstanceFirst: return "instance-first";
        case RefineMode::Off: return "off";
        case RefineMode::PositionAndContent: return "position-and-content";
    }
    return "parallel";
}

namespace {

QueryLevel parse_level(const std::string& s) {
    if (s == "dual") return QueryLevel::Dual;
    if (s == "instance") return QueryLevel::Instance;
    if (s == "boundary") return QueryLevel::Boundary;
    throw ConfigError("level must be dual|instance|boundary, got '" + s + "'");
}

InitMode parse_init(const std::string& s) {
    if (s == "joint") return InitMode::Joint;
    if (s == "position-only") return InitMode::PositionOnly;
    if (s == "learned") return InitMode::Learned;
    throw ConfigError("init must be joint|position-only|learned, got '" + s + "'");
}

RefineMode parse_refine(const std::string& s) {
    if (s == "parallel") return RefineMode::Parallel;
    if (s == "boundary-first") return RefineMode::BoundaryFirst;
    if (s == "instance-first") return RefineMode::InstanceFirst;
    if (s == "off") return RefineMode::Off;
    if (s == "position-and-content") return RefineMode::PositionAndContent;
    throw ConfigError(
        "refine must be parallel|boundary-first|instance-first|off|position-and-content, got '" +
        s + "'");
}

bool parse_bool(const std::string& key, const std::string& s) {
    if (s == "on" || s == "true" || s == "1") return true;
    if (s == "off" || s == "false" || s == "0") return false;
    throw ConfigError(key + " must be on|off, got '" + s + "'");
}

class KeyMap {
public:
    explicit KeyMap(const std::string& text) {
        std::istringstream ss(text);
        std::string line;
        int line_no = 0;
        while (std::getline(ss, line)) {
            ++line_no;
            size_t hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            auto trim = [](std::string s) {
                size_t a = s.find_first_not_of(" \t\r");
                size_t b = s.find_last_not_of(" \t\r");
                return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
            };
            std::string t = trim(line);
            if (t.empty()) continue;
            size_t eq = t.find('=');
            if (eq == std::string::npos)
                throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
            std::string key = trim(t.substr(0, eq));
            std::string value = trim(t.substr(eq + 1));
            if (key.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
            if (map_.count(key))
                throw ConfigError("duplicate config key '" + key + "'");
            map_[key] = value;
        }
    }

    template <typename F>
    void take(const std::string& key, F&& apply) {
        auto it = map_.find(key);
        if (it == map_.end()) return;
        apply(it->second);
        map_.erase(it);
    }

    void take_int(const std::string& key, int& out) {
        take(key, [&](const std::string& v) { out = std::stoi(v); });
    }
    void take_u64(const std::string& key, uint64_t& out) {
        take(key, [&](const std::string& v) { out = std::stoull(v); });
    }
    void take_double(const std::string& key, double& out) {
        take(key, [&](const std::string& v) { out = std::stod(v); });
    }
    void take_string(const std::string& key, std::string& out) {
        take(key, [&](const std::string& v) { out = v; });
    }
    void take_bool(const std::string& key, bool& out) {
        take(key, [&](const std::string& v) { out = parse_bool(key, v); });
    }

    void finish() const {
        if (!map_.empty())
            throw ConfigError("unknown config key '" + map_.begin()->first + "'");
    }

private:
    std::map<std::string, std::string> map_;
};

}  // namespace

RunConfig RunConfig::from_text(const std::string& text) {
    RunConfig c;
    KeyMap keys(text);
    try {
        keys.take_int("dim", c.model.dim);
        keys.take_int("enc_layers", c.model.enc_layers);
        keys.take_int("dec_layers", c.model.dec_layers);
        keys.take_int("num_queries", c.model.num_queries);
        keys.take_int("heads", c.model.heads);
        keys.take_int("points", c.model.points);
        keys.take_int("num_classes", c.model.num_classes);
        keys.take_int("ffn_mult", c.model.ffn_mult);
        keys.take("level", [&](const std::string& v) { c.model.level = parse_level(v); });
        keys.take("branch", [&](const std::string& v) {
            if (v == "two-branch")
                c.model.shared_branch = false;
            else if (v == "shared")
                c.model.shared_branch = true;
            else
                throw ConfigError("branch must be two-branch|shared, got '" + v + "'");
        });
        keys.take_bool("align", c.model.align);
        keys.take("init", [&](const std::string& v) { c.model.init = parse_init(v); });
        keys.take("refine", [&](const std::string& v) { c.model.refine = parse_refine(v); });

        keys.take_string("data_dir", c.data_dir);
        keys.take_int("window", c.window);
        keys.take_double("train_stride_ratio", c.train_stride_ratio);
        keys.take_double("infer_stride_ratio", c.infer_stride_ratio);
        keys.take_double("frame_rate", c.frame_rate);
        keys.take_int("synth_videos", c.synth.num_videos);
        keys.take_int("synth_video_offset", c.synth.video_offset);
        keys.take_int("synth_length", c.synth.t);
        keys.take_int("synth_overlap_level", c.synth.overlap_level);
        keys.take_double("synth_noise_sigma", c.synth.noise_sigma);
        keys.take_int("synth_min_instances", c.synth.min_instances);
        keys.take_int("synth_max_instances", c.synth.max_instances);
        keys.take_double("synth_min_dur_frac", c.synth.min_dur_frac);
        keys.take_double("synth_max_dur_frac", c.synth.max_dur_frac);
        keys.take_double("synth_stride_sec", c.synth.stride_sec);

        keys.take_double("lr", c.lr);
        keys.take_double("weight_decay", c.weight_decay);
        keys.take_int("epochs", c.epochs);
        keys.take_int("lr_drop_epochs", c.lr_drop_epochs);
        keys.take_double("lr_drop_factor", c.lr_drop_factor);
        keys.take_double("clip_norm", c.clip_norm);
        keys.take_bool("ema", c.ema);
        keys.take_double("ema_decay", c.ema_decay);
        keys.take_int("batch_size", c.batch_size);
        keys.take_u64("seed", c.seed);

        keys.take_double("cost_cls", c.cost_w.cls);
        keys.take_double("cost_iou", c.cost_w.iou);
        keys.take_double("cost_l1", c.cost_w.l1);
        keys.take_double("loss_cls", c.loss_w.cls);
        keys.take_double("loss_iou", c.loss_w.iou);
        keys.take_double("loss_l1", c.loss_w.l1);
        keys.take_double("focal_alpha", c.focal.alpha);
        keys.take_double("focal_gamma", c.focal.gamma);
    } catch (const std::invalid_argument&) {
        throw ConfigError("unparsable numeric value in config");
    } catch (const std::out_of_range&) {
        throw ConfigError("numeric value out of range in config");
    }
    keys.finish();

    c.model.seed = c.seed;
    c.synth.seed = c.seed;
    c.synth.num_classes = c.model.num_classes;
    c.synth.d = c.model.dim;
    c.validate();
    return c;
}

RunConfig RunConfig::load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open config file " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    RunConfig cfg = from_text(ss.str());
    // referenced paths must exist when loading from a file; embedded config
    // echoes skip this so checkpoints stay portable across machines
    if (!cfg.data_dir.empty() && !std::filesystem::is_directory(cfg.data_dir))
        throw ConfigError("data_dir does not exist: " + cfg.data_dir);
    return cfg;
}

void RunConfig::validate() const {
    model.validate();
    if (window < 1) throw ConfigError("window must be positive");
    if (model.num_queries > window)
        throw ConfigError("num_queries must not exceed the window length");
    if (train_stride_ratio <= 0 || infer_stride_ratio <= 0)
        throw ConfigError("stride ratios must be positive");
    if (epochs < 1 || lr_drop_epochs < 0) throw ConfigError("bad epoch counts");
    if (batch_size < 1) throw ConfigError("batch_size must be positive");
    if (lr <= 0 || clip_norm <= 0) throw ConfigError("lr and clip_norm must be positive");
    if (ema_decay <= 0 || ema_decay >= 1) throw ConfigError("ema_decay must lie in (0,1)");
    if (frame_rate <= 0) throw ConfigError("frame_rate must be positive");
}

std::string RunConfig::echo() const {
    std::ostringstream os;
    auto num = [](double v) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.10g", v);
        return std::string(buf);
    };
    os << "dim = " << model.dim << "\n";
    os << "enc_layers = " << model.enc_layers << "\n";
    os << "dec_layers = " << model.dec_layers << "\n";
    os << "num_queries = " << model.num_queries << "\n";
    os << "heads = " << model.heads << "\n";
    os << "points = " << model.points << "\n";
    os << "num_classes = " << model.num_classes << "\n";
    os << "ffn_mult = " << model.ffn_mult << "\n";
    os << "level = " << level_name(model.level) << "\n";
    os << "branch = " << (model.shared_branch ? "shared" : "two-branch") << "\n";
    os << "align = " << (model.align ? "on" : "off") << "\n";
    os << "init = " << init_name(model.init) << "\n";
    os << "refine = " << refine_name(model.refine) << "\n";
    os << "data_dir = " << data_dir << "\n";
    os << "window = " << window << "\n";
    os << "train_stride_ratio = " << num(train_stride_ratio) << "\n";
    os << "infer_stride_ratio = " << num(infer_stride_ratio) << "\n";
    os << "frame_rate = " << num(frame_rate) << "\n";
    os << "synth_videos = " << synth.num_videos << "\n";
    os << "synth_video_offset = " << synth.video_offset << "\n";
    os << "synth_length = " << synth.t << "\n";
    os << "synth_overlap_level = " << synth.overlap_level << "\n";
    os << "synth_noise_sigma = " << num(synth.noise_sigma) << "\n";
    os << "synth_min_instances = " << synth.min_instances << "\n";
    os << "synth_max_instances = " << synth.max_instances << "\n";
    os << "synth_min_dur_frac = " << num(synth.min_dur_frac) << "\n";
    os << "synth_max_dur_frac = " << num(synth.max_dur_frac) << "\n";
    os << "synth_stride_sec = " << num(synth.stride_sec) << "\n";
    os << "lr = " << num(lr) << "\n";
    os << "weight_decay = " << num(weight_decay) << "\n";
    os << "epochs = " << epochs << "\n";
    os << "lr_drop_epochs = " << lr_drop_epochs << "\n";
    os << "lr_drop_factor = " << num(lr_drop_factor) << "\n";
    os << "clip_norm = " << num(clip_norm) << "\n";
    os << "ema = " << (ema ? "on" : "off") << "\n";
    os << "ema_decay = " << num(ema_decay) << "\n";
    os << "batch_size = " << batch_size << "\n";
    os << "seed = " << seed << "\n";
    os << "cost_cls = " << num(cost_w.cls) << "\n";
    os << "cost_iou = " << num(cost_w.iou) << "\n";
    os << "cost_l1 = " << num(cost_w.l1) << "\n";
    os << "loss_cls = " << num(loss_w.cls) << "\n";
    os << "loss_iou = " << num(loss_w.iou) << "\n";
    os << "loss_l1 = " << num(loss_w.l1) << "\n";
    os << "focal_alpha = " << num(focal.alpha) << "\n";
    os << "focal_gamma = " << num(focal.gamma) << "\n";
    return os.str();
}

}  // namespace dualdetr
