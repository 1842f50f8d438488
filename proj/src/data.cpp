#include "dualdetr/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace dualdetr {

void VideoRecord::validate(int num_classes) const {
    for (const auto& a : annotations) {
        if (!(a.start_sec >= 0 && a.start_sec < a.end_sec && a.end_sec <= duration_sec + 1e-9))
            throw DataError("annotation outside [0, duration] or degenerate in video " + id);
        if (a.class_id < 0 || a.class_id >= num_classes)
            throw DataError("annotation class out of range in video " + id);
    }
    if (features.t * features.d != static_cast<int>(features.values.size()))
        throw DataError("feature size mismatch in video " + id);
}

// ------------------------------------------------------------------ synth

namespace {

std::vector<std::vector<double>> orthonormal_signatures(int num_classes, int d, Rng& rng) {
    if (num_classes > d)
        throw ConfigError("synthetic generator needs num_classes <= feature dim");
    std::vector<std::vector<double>> sig(static_cast<size_t>(num_classes),
                                         std::vector<double>(static_cast<size_t>(d)));
    for (auto& s : sig) {
        for (int attempt = 0;; ++attempt) {
            for (auto& x : s) x = rng.normal();
            // Gram-Schmidt against the previous signatures
            for (const auto& prev : sig) {
                if (&prev == &s) break;
                double dot = 0;
                for (int j = 0; j < d; ++j) dot += prev[static_cast<size_t>(j)] * s[static_cast<size_t>(j)];
                for (int j = 0; j < d; ++j) s[static_cast<size_t>(j)] -= dot * prev[static_cast<size_t>(j)];
            }
            double nrm = 0;
            for (double x : s) nrm += x * x;
            nrm = std::sqrt(nrm);
            if (nrm > 1e-6) {
                for (auto& x : s) x /= nrm;
                break;
            }
            if (attempt > 16) throw NumericError("signature orthonormalization failed");
        }
    }
    return sig;
}

struct Placement {
    int start;
    int len;
    int cls;
};

}  // namespace

std::vector<VideoRecord> synth_generate(const SynthParams& p) {
    if (p.num_classes < 1) throw ConfigError("num_classes must be positive");
    if (p.overlap_level < 1) throw ConfigError("overlap_level must allow at least one instance");
    if (p.t < 4 || p.d < 1) throw ConfigError("synthetic sequences need t >= 4, d >= 1");
    if (p.min_dur_frac <= 0 || p.max_dur_frac < p.min_dur_frac || p.max_dur_frac > 1.0)
        throw ConfigError("bad duration fraction range");
    int min_len = std::max(2, static_cast<int>(std::round(p.min_dur_frac * p.t)));
    int max_len = std::max(min_len, static_cast<int>(std::round(p.max_dur_frac * p.t)));
    if (max_len > p.t) throw ConfigError("instance duration exceeds sequence length");

    Rng sig_rng(p.seed);
    auto signatures = orthonormal_signatures(p.num_classes, p.d, sig_rng);

    std::vector<VideoRecord> videos;
    videos.reserve(static_cast<size_t>(p.num_videos));
    for (int vi = 0; vi < p.num_videos; ++vi) {
        int v = p.video_offset + vi;
        Rng rng(p.seed * 1000003ULL + static_cast<uint64_t>(v) + 1);
        int want = static_cast<int>(rng.uniform_int(p.min_instances, p.max_instances));

        std::vector<int> concurrency(static_cast<size_t>(p.t), 0);
        std::vector<Placement> placed;
        for (int i = 0; i < want; ++i) {
            bool ok = false;
            for (int attempt = 0; attempt < 100 && !ok; ++attempt) {
                int len = static_cast<int>(rng.uniform_int(min_len, max_len));
                int start = static_cast<int>(rng.uniform_int(0, p.t - len));
                int cls = static_cast<int>(rng.uniform_int(0, p.num_classes - 1));
                bool fits = true;
                for (int s = start; s < start + len && fits; ++s)
                    if (concurrency[static_cast<size_t>(s)] >= p.overlap_level) fits = false;
                // same-class instances never overlap: concurrent identical
                // envelopes would be indistinguishable in the features
                for (const auto& q : placed) {
                    if (!fits) break;
                    if (q.cls == cls && start < q.start + q.len && q.start < start + len)
                        fits = false;
                }
                if (!fits) continue;
                for (int s = start; s < start + len; ++s) ++concurrency[static_cast<size_t>(s)];
                placed.push_back({start, len, cls});
                ok = true;
            }
        }
        std::sort(placed.begin(), placed.end(), [](const Placement& a, const Placement& b) {
            if (a.start != b.start) return a.start < b.start;
            return a.cls < b.cls;
        });

        VideoRecord rec;
        char buf[32];
        std::snprintf(buf, sizeof buf, "synth_%04d", v);
        rec.id = buf;
        rec.features.t = p.t;
        rec.features.d = p.d;
        rec.features.stride_sec = p.stride_sec;
        rec.features.values.assign(static_cast<size_t>(p.t) * p.d, 0.0);
        rec.duration_sec = p.t * p.stride_sec;

        for (const auto& q : placed) {
            for (int s = q.start; s < q.start + q.len; ++s) {
                double phase = M_PI * (s - q.start + 0.5) / q.len;
                double env = std::sin(phase) * std::sin(phase);
                double* row = &rec.features.values[static_cast<size_t>(s) * p.d];
                const auto& u = signatures[static_cast<size_t>(q.cls)];
                for (int j = 0; j < p.d; ++j) row[static_cast<size_t>(j)] += env * u[static_cast<size_t>(j)];
            }
            rec.annotations.push_back(
                {q.start * p.stride_sec, (q.start + q.len) * p.stride_sec, q.cls});
        }
        if (p.noise_sigma > 0) {
            for (auto& x : rec.features.values) x += p.noise_sigma * rng.normal();
        }
        rec.validate(p.num_classes);
        videos.push_back(std::move(rec));
    }
    return videos;
}

// ------------------------------------------------------------------ files

namespace {
constexpr char kFeatMagic[8] = {'D', 'D', 'T', 'R', 'F', 'E', 'A', 'T'};

void put_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(const unsigned char* b) {
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

void put_f32(std::ostream& os, float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(os, bits);
}
}  // namespace

void save_features(const std::string& path, const FeatureSequence& fs) {
    if (fs.t < 1) throw DataError("refusing to write empty feature sequence");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path + " for writing");
    os.write(kFeatMagic, 8);
    put_u32(os, static_cast<uint32_t>(fs.t));
    put_u32(os, static_cast<uint32_t>(fs.d));
    for (double v : fs.values) put_f32(os, static_cast<float>(v));
    if (!os) throw IoError("write failure on " + path);
}

FeatureSequence load_features(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path);
    std::vector<unsigned char> raw((std::istreambuf_iterator<char>(is)),
                                   std::istreambuf_iterator<char>());
    if (raw.size() < 8 || std::memcmp(raw.data(), kFeatMagic, 8) != 0)
        throw IoError(path + ": bad magic at byte offset 0");
    if (raw.size() < 16) throw IoError(path + ": truncated header at byte offset 8");
    uint64_t t = get_u32(&raw[8]);
    uint64_t d = get_u32(&raw[12]);
    if (t == 0) throw DataError(path + ": empty feature sequence (T = 0)");
    if (d == 0) throw DataError(path + ": zero-channel feature sequence");
    uint64_t count = t * d;
    if (count > (1ULL << 31)) throw IoError(path + ": T*D overflows supported payload size");
    uint64_t expect = 16 + count * 4;
    if (raw.size() != expect)
        throw IoError(path + ": truncated payload at byte offset " + std::to_string(raw.size()) +
                      ", expected " + std::to_string(expect) + " bytes");
    FeatureSequence fs;
    fs.t = static_cast<int>(t);
    fs.d = static_cast<int>(d);
    fs.values.resize(count);
    for (uint64_t i = 0; i < count; ++i) {
        uint32_t bits = get_u32(&raw[16 + i * 4]);
        float f;
        std::memcpy(&f, &bits, 4);
        fs.values[i] = static_cast<double>(f);
    }
    return fs;
}

void save_annotations(const std::string& path, const std::vector<VideoRecord>& videos) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open " + path + " for writing");
    os << "# video_id,start_seconds,end_seconds,class_id\n";
    char buf[128];
    for (const auto& v : videos)
        for (const auto& a : v.annotations) {
            std::snprintf(buf, sizeof buf, "%s,%.6f,%.6f,%d\n", v.id.c_str(), a.start_sec,
                          a.end_sec, a.class_id);
            os << buf;
        }
}

std::map<std::string, std::vector<ActionInstance>> load_annotations(const std::string& path,
                                                                    int num_classes) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open " + path);
    std::map<std::string, std::vector<ActionInstance>> out;
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string id, s, e, c;
        if (!std::getline(ss, id, ',') || !std::getline(ss, s, ',') || !std::getline(ss, e, ',') ||
            !std::getline(ss, c))
            throw DataError(path + ":" + std::to_string(line_no) + ": expected 4 comma fields");
        ActionInstance a;
        try {
            a.start_sec = std::stod(s);
            a.end_sec = std::stod(e);
            a.class_id = std::stoi(c);
        } catch (const std::exception&) {
            throw DataError(path + ":" + std::to_string(line_no) + ": unparsable number");
        }
        if (a.end_sec <= a.start_sec)
            throw DataError(path + ":" + std::to_string(line_no) +
                            ": zero or negative duration rejected");
        if (a.class_id < 0 || a.class_id >= num_classes)
            throw DataError(path + ":" + std::to_string(line_no) + ": unknown class id " + c);
        out[id].push_back(a);
    }
    return out;
}

void save_vocabulary(const std::string& path, int num_classes) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open " + path + " for writing");
    for (int c = 0; c < num_classes; ++c) os << "class_" << c << "\n";
}

std::vector<std::string> load_vocabulary(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open " + path);
    std::vector<std::string> names;
    std::string line;
    while (std::getline(is, line)) {
        while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
        if (!line.empty()) names.push_back(line);
    }
    if (names.empty()) throw DataError(path + ": empty vocabulary");
    return names;
}

// ---------------------------------------------------------------- windows

std::vector<Window> make_windows(const VideoRecord& video, int w, double stride_ratio) {
    if (w <= 0) throw ConfigError("window length must be positive");
    int t = video.features.t;
    int d = video.features.d;
    double tau = video.features.stride_sec;
    int stride = std::max(1, static_cast<int>(std::round(w * stride_ratio)));

    std::vector<int> starts;
    if (t <= w) {
        starts.push_back(0);
    } else {
        for (int s = 0; s + w <= t; s += stride) starts.push_back(s);
        if (starts.back() + w < t) starts.push_back(t - w);
    }

    std::vector<Window> windows;
    windows.reserve(starts.size());
    for (int s : starts) {
        Window win;
        win.video_id = video.id;
        win.start = s;
        win.length = w;
        win.valid = std::min(w, t - s);
        win.offset_sec = s * tau;
        win.span_sec = (w - 1) * tau;
        win.features.assign(static_cast<size_t>(w) * d, 0.0);
        std::copy_n(video.features.values.begin() + static_cast<size_t>(s) * d,
                    static_cast<size_t>(win.valid) * d, win.features.begin());

        double w_begin = s * tau;
        double w_end = (s + win.valid - 1) * tau;  // last valid snippet timestamp
        for (const auto& a : video.annotations) {
            double cs = std::max(a.start_sec, w_begin);
            double ce = std::min(a.end_sec, w_end);
            if (ce - cs < tau * (1.0 - 1e-9)) continue;  // clipped extent under one snippet
            Interval iv;
            iv.start = (cs - w_begin) / win.span_sec;
            iv.end = (ce - w_begin) / win.span_sec;
            iv.start = std::min(1.0, std::max(0.0, iv.start));
            iv.end = std::min(1.0, std::max(0.0, iv.end));
            win.gts.intervals.push_back(iv);
            win.gts.classes.push_back(a.class_id);
        }
        windows.push_back(std::move(win));
    }
    return windows;
}

}  // namespace dualdetr
