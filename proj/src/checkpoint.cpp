#include "dualdetr/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace dualdetr {

namespace {
constexpr char kMagic[8] = {'D', 'D', 'T', 'R', 'C', 'K', 'P', 'T'};
constexpr uint32_t kVersion = 1;

void put_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

struct Reader {
    std::vector<unsigned char> raw;
    size_t pos = 0;
    std::string path;

    void need(size_t n, const char* what) {
        if (pos + n > raw.size())
            throw IoError(path + ": truncated checkpoint while reading " + what + " at byte offset " +
                          std::to_string(pos));
    }
    uint32_t u32(const char* what) {
        need(4, what);
        uint32_t v = static_cast<uint32_t>(raw[pos]) | (static_cast<uint32_t>(raw[pos + 1]) << 8) |
                     (static_cast<uint32_t>(raw[pos + 2]) << 16) |
                     (static_cast<uint32_t>(raw[pos + 3]) << 24);
        pos += 4;
        return v;
    }
    std::string str(size_t n, const char* what) {
        need(n, what);
        std::string s(reinterpret_cast<const char*>(&raw[pos]), n);
        pos += n;
        return s;
    }
};

void write_body(std::ostream& os, const ParamRegistry& params,
                const std::vector<std::vector<double>>* override_values,
                const std::string& config_echo) {
    os.write(kMagic, 8);
    put_u32(os, kVersion);
    put_u32(os, static_cast<uint32_t>(config_echo.size()));
    os.write(config_echo.data(), static_cast<std::streamsize>(config_echo.size()));
    put_u32(os, static_cast<uint32_t>(params.all().size()));
    for (size_t i = 0; i < params.all().size(); ++i) {
        const Parameter& p = params.all()[i];
        put_u32(os, static_cast<uint32_t>(p.name.size()));
        os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
        put_u32(os, static_cast<uint32_t>(p.tensor->shape.size()));
        for (int d : p.tensor->shape) put_u32(os, static_cast<uint32_t>(d));
        const std::vector<double>& vals =
            override_values ? (*override_values)[i] : p.tensor->val;
        for (double v : vals) {
            float f = static_cast<float>(v);
            uint32_t bits;
            std::memcpy(&bits, &f, 4);
            put_u32(os, bits);
        }
    }
}

}  // namespace

void save_checkpoint(const std::string& path, const ParamRegistry& params,
                     const std::string& config_echo) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path + " for writing");
    write_body(os, params, nullptr, config_echo);
    if (!os) throw IoError("write failure on " + path);
}

void save_checkpoint_with_values(const std::string& path, const ParamRegistry& params,
                                 const std::vector<std::vector<double>>& values,
                                 const std::string& config_echo) {
    if (values.size() != params.all().size())
        throw NumericError("checkpoint override value count mismatch");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path + " for writing");
    write_body(os, params, &values, config_echo);
    if (!os) throw IoError("write failure on " + path);
}

LoadedCheckpoint read_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path);
    Reader r;
    r.path = path;
    r.raw.assign(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
    if (r.raw.size() < 8 || std::memcmp(r.raw.data(), kMagic, 8) != 0)
        throw IoError(path + ": not a checkpoint file (bad magic)");
    r.pos = 8;
    uint32_t version = r.u32("version");
    if (version != kVersion)
        throw IoError(path + ": unsupported checkpoint version " + std::to_string(version));
    LoadedCheckpoint out;
    uint32_t cfg_len = r.u32("config length");
    out.config_echo = r.str(cfg_len, "config echo");
    uint32_t n = r.u32("parameter count");
    out.names.reserve(n);
    for (uint32_t i = 0; i < n; ++i) {
        uint32_t name_len = r.u32("name length");
        out.names.push_back(r.str(name_len, "parameter name"));
        uint32_t rank = r.u32("rank");
        std::vector<int> shape(rank);
        int64_t count = 1;
        for (uint32_t k = 0; k < rank; ++k) {
            shape[k] = static_cast<int>(r.u32("dimension"));
            count *= shape[k];
        }
        out.shapes.push_back(shape);
        std::vector<double> vals(static_cast<size_t>(count));
        for (int64_t k = 0; k < count; ++k) {
            uint32_t bits = r.u32("values");
            float f;
            std::memcpy(&f, &bits, 4);
            vals[static_cast<size_t>(k)] = static_cast<double>(f);
        }
        out.values.push_back(std::move(vals));
    }
    return out;
}

void apply_checkpoint(const LoadedCheckpoint& ckpt, ParamRegistry& params) {
    if (ckpt.names.size() != params.all().size())
        throw ConfigError("checkpoint holds " + std::to_string(ckpt.names.size()) +
                          " parameters, model expects " + std::to_string(params.all().size()));
    for (size_t i = 0; i < ckpt.names.size(); ++i) {
        const Parameter* p = params.find(ckpt.names[i]);
        if (!p) throw ConfigError("checkpoint parameter not in model: " + ckpt.names[i]);
        if (p->tensor->shape != ckpt.shapes[i])
            throw ConfigError("shape mismatch for parameter " + ckpt.names[i]);
        p->tensor->val = ckpt.values[i];
    }
}

}  // namespace dualdetr
