#include "cmc/model/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

#include "cmc/core/error.hpp"

namespace cmc {

namespace {
constexpr char kMagic[8] = {'C', 'M', 'C', 'C', 'K', 'P', 'T', '1'};

std::string shape_str(const std::vector<int>& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
    return out + "]";
}
}  // namespace

Index Tensor::numel() const {
    return std::accumulate(shape.begin(), shape.end(), Index(1), std::multiplies<>());
}

Tensor inflate_2d_weights(const Tensor& w2d, int depth, InflationMode mode) {
    if (w2d.shape.size() != 4) throw InvalidArgument("inflation expects a (Cout,Cin,k,k) kernel");
    if (depth < 1) throw InvalidArgument("inflation depth must be >= 1");
    if (Index(w2d.data.size()) != w2d.numel()) throw InvalidArgument("kernel data does not match its shape");
    const int cout = w2d.shape[0], cin = w2d.shape[1], kh = w2d.shape[2], kw = w2d.shape[3];
    Tensor out{{cout, cin, depth, kh, kw}, {}};
    out.data.assign(std::size_t(out.numel()), 0.0);
    const Index plane = Index(kh) * kw;
    const int center = depth / 2;
    for (Index oc = 0; oc < Index(cout) * cin; ++oc)
        for (int t = 0; t < depth; ++t) {
            if (mode == InflationMode::Center && t != center) continue;
            const Real scale = mode == InflationMode::Repeat ? Real(1) / depth : Real(1);
            for (Index k = 0; k < plane; ++k)
                out.data[std::size_t((oc * depth + t) * plane + k)] = w2d.data[std::size_t(oc * plane + k)] * scale;
        }
    return out;
}

const Tensor* Checkpoint::find(const std::string& name) const {
    for (const auto& [n, t] : tensors)
        if (n == name) return &t;
    return nullptr;
}

void Checkpoint::put(std::string name, Tensor t) {
    for (auto& [n, existing] : tensors)
        if (n == name) {
            existing = std::move(t);
            return;
        }
    tensors.emplace_back(std::move(name), std::move(t));
}

void save_checkpoint(const std::filesystem::path& file, const Checkpoint& ckpt) {
    nlohmann::json manifest;
    manifest["metadata"] = ckpt.metadata;
    manifest["tensors"] = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto& [name, t] : ckpt.tensors) {
        if (Index(t.data.size()) != t.numel()) throw CheckpointError("tensor " + name + " data does not match shape");
        const std::uint64_t nbytes = t.data.size() * sizeof(Real);
        manifest["tensors"].push_back(
            {{"name", name}, {"shape", t.shape}, {"dtype", "float64"}, {"offset", offset}, {"nbytes", nbytes}});
        offset += nbytes;
    }
    const std::string text = manifest.dump();
    if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
    const auto tmp = file.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw CheckpointError("cannot write checkpoint " + file.string());
        out.write(kMagic, sizeof kMagic);
        const std::uint64_t len = text.size();
        out.write(reinterpret_cast<const char*>(&len), sizeof len);
        out.write(text.data(), std::streamsize(text.size()));
        for (const auto& [name, t] : ckpt.tensors)
            out.write(reinterpret_cast<const char*>(t.data.data()), std::streamsize(t.data.size() * sizeof(Real)));
        if (!out) throw CheckpointError("short write on checkpoint " + file.string());
    }
    std::filesystem::rename(tmp, file);
}

Checkpoint read_checkpoint(const std::filesystem::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw NotFound("checkpoint not found: " + file.string());
    char magic[8];
    in.read(magic, sizeof magic);
    if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0)
        throw CheckpointError(file.string() + " is not a checkpoint file");
    std::uint64_t len = 0;
    in.read(reinterpret_cast<char*>(&len), sizeof len);
    std::string text(len, '\0');
    in.read(text.data(), std::streamsize(len));
    if (!in) throw CheckpointError("truncated checkpoint manifest in " + file.string());
    const auto manifest = nlohmann::json::parse(text, nullptr, false);
    if (manifest.is_discarded() || !manifest.contains("tensors"))
        throw CheckpointError("malformed checkpoint manifest in " + file.string());
    const auto blob_start = in.tellg();
    Checkpoint ckpt;
    ckpt.metadata = manifest.value("metadata", nlohmann::json::object());
    for (const auto& e : manifest["tensors"]) {
        if (e.at("dtype") != "float64") throw CheckpointError("unsupported dtype " + e.at("dtype").dump());
        Tensor t;
        t.shape = e.at("shape").get<std::vector<int>>();
        t.data.resize(std::size_t(t.numel()));
        if (e.at("nbytes").get<std::uint64_t>() != t.data.size() * sizeof(Real))
            throw CheckpointError("tensor " + e.at("name").get<std::string>() + ": size does not match shape");
        in.seekg(blob_start + std::streamoff(e.at("offset").get<std::uint64_t>()));
        in.read(reinterpret_cast<char*>(t.data.data()), std::streamsize(t.data.size() * sizeof(Real)));
        if (!in) throw CheckpointError("truncated tensor data in " + file.string());
        ckpt.tensors.emplace_back(e.at("name").get<std::string>(), std::move(t));
    }
    return ckpt;
}

Tensor to_tensor(const Parameter& p) {
    Tensor t{p.shape, {}};
    t.data.assign(p.var->value.data(), p.var->value.data() + p.var->value.size());
    return t;
}

Checkpoint snapshot(const ParameterStore& params, nlohmann::json metadata) {
    Checkpoint c;
    c.metadata = std::move(metadata);
    for (const auto& p : params.items()) c.tensors.emplace_back(p.name, to_tensor(p));
    return c;
}

std::string NameMapping::map(const std::string& name) const {
    for (const auto& [from, to] : rules)
        if (name.starts_with(from)) return to + name.substr(from.size());
    return name;
}

NameMapping NameMapping::parse(const std::string& text) {
    NameMapping m;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    auto trim = [](std::string s) {
        const auto a = s.find_first_not_of(" \t\r");
        const auto b = s.find_last_not_of(" \t\r");
        return a == std::string::npos ? std::string{} : s.substr(a, b - a + 1);
    };
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.starts_with("inflate ")) {
            const auto mode = trim(line.substr(8));
            if (mode == "center")
                m.inflate = InflationMode::Center;
            else if (mode == "repeat")
                m.inflate = InflationMode::Repeat;
            else
                throw InvalidArgument("mapping line " + std::to_string(lineno) + ": unknown inflation '" + mode + "'");
            continue;
        }
        const auto arrow = line.find("=>");
        if (arrow == std::string::npos)
            throw InvalidArgument("mapping line " + std::to_string(lineno) + ": expected 'from => to'");
        m.rules.emplace_back(trim(line.substr(0, arrow)), trim(line.substr(arrow + 2)));
    }
    return m;
}

NameMapping NameMapping::read(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw NotFound("mapping file not found: " + file.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
}

LoadReport load_pretrained(ParameterStore& params, const Checkpoint& ckpt, const NameMapping& mapping,
                           const LoadOptions& options) {
    const auto inflation = options.inflation ? options.inflation : mapping.inflate;
    LoadReport report;
    std::vector<std::string> mismatched;
    std::vector<std::pair<Parameter*, Tensor>> staged;
    std::vector<std::string> seen;

    for (const auto& [raw_name, t] : ckpt.tensors) {
        if (!options.ignore_prefix.empty() && raw_name.starts_with(options.ignore_prefix)) continue;
        const std::string name = mapping.map(raw_name);
        Parameter* p = params.find(name);
        if (!p) {
            report.unmapped.push_back(raw_name);
            continue;
        }
        Tensor value = t;
        if (value.shape.size() == 4 && p->shape.size() == 5 && inflation) {
            value = inflate_2d_weights(value, p->shape[2], *inflation);
            report.inflated.push_back(name);
        }
        if (value.shape != p->shape) {
            mismatched.push_back(raw_name + " -> " + name + " " + shape_str(t.shape) + " vs " + shape_str(p->shape));
            continue;
        }
        seen.push_back(name);
        staged.emplace_back(p, std::move(value));
    }
    if (!mismatched.empty()) {
        std::string msg = "shape mismatch for";
        for (const auto& m : mismatched) msg += " " + m + ";";
        throw CheckpointError(msg);
    }
    for (const auto& p : params.items())
        if (std::find(seen.begin(), seen.end(), p.name) == seen.end()) report.missing.push_back(p.name);
    if (options.strict && (!report.missing.empty() || !report.unmapped.empty())) {
        std::string msg = "strict load failed;";
        for (const auto& m : report.missing) msg += " missing " + m + ";";
        for (const auto& u : report.unmapped) msg += " unmapped " + u + ";";
        throw CheckpointError(msg);
    }
    for (auto& [p, t] : staged) {
        std::copy(t.data.begin(), t.data.end(), p->var->value.data());
        report.loaded.push_back(p->name);
    }
    for (const auto& m : report.missing) std::cerr << "warning: " << m << " not in checkpoint; keeping fresh init\n";
    return report;
}

}  // namespace cmc
