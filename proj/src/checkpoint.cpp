#include <cstring>
#include <fstream>
#include <vector>

#include <json.hpp>

#include "vxls/network.hpp"

namespace vxls {

using nlohmann::json;

namespace {

json config_to_json(const NetworkConfig& c) {
    json j;
    j["in_channels"] = c.in_channels;
    j["n_classes"] = c.n_classes;
    j["stages"] = c.stages;
    j["base_channels"] = c.base_channels;
    j["blocks_per_stage"] = c.blocks_per_stage;
    j["max_channels"] = c.max_channels;
    j["placement"] = to_string(c.placement);
    j["patch_dims"] = c.patch_dims;
    j["leaky_slope"] = c.leaky_slope;
    return j;
}

NetworkConfig config_from_json(const json& j) {
    NetworkConfig c;
    c.in_channels = j.at("in_channels").get<int>();
    c.n_classes = j.at("n_classes").get<int>();
    c.stages = j.at("stages").get<int>();
    c.base_channels = j.at("base_channels").get<int>();
    c.blocks_per_stage = j.at("blocks_per_stage").get<int>();
    c.max_channels = j.at("max_channels").get<int>();
    c.placement = placement_from_string(j.at("placement").get<std::string>());
    auto pd = j.at("patch_dims");
    for (int i = 0; i < 3; ++i) c.patch_dims[i] = pd.at(i).get<std::int64_t>();
    c.leaky_slope = j.at("leaky_slope").get<double>();
    return c;
}

template <typename V>
void write_raw(std::ofstream& f, const V& v) {
    f.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

}  // namespace

void save_checkpoint(const Model& model, const std::string& path, const std::string& stage_tag) {
    json header;
    header["stage"] = stage_tag;
    header["kind"] = model.kind == ModelKind::mae ? "mae" : "segmentation";
    header["seed"] = model.seed;
    header["config"] = config_to_json(model.cfg);
    json dir = json::array();
    std::uint64_t offset = 0;
    for (const auto& [name, t] : model.params.by_name) {
        json e;
        e["name"] = name;
        e["shape"] = t.shape;
        e["offset"] = offset;
        offset += static_cast<std::uint64_t>(t.numel()) * sizeof(float);
        dir.push_back(e);
    }
    header["params"] = dir;
    const std::string hs = header.dump();

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + path);
    f.write("VXLS", 4);
    write_raw(f, kCheckpointVersion);
    const std::uint64_t hlen = hs.size();
    write_raw(f, hlen);
    f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (const auto& [name, t] : model.params.by_name)
        f.write(reinterpret_cast<const char*>(t.ptr()),
                static_cast<std::streamsize>(t.numel() * sizeof(float)));
    if (!f) throw IoError("short write to " + path);
}

Model load_checkpoint(const std::string& path, std::string* stage_tag) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path);
    char magic[4];
    f.read(magic, 4);
    if (f.gcount() != 4 || std::memcmp(magic, "VXLS", 4) != 0)
        throw IoError(path + ": not a VXLS checkpoint");
    std::uint32_t version = 0;
    f.read(reinterpret_cast<char*>(&version), sizeof(version));
    if (version != kCheckpointVersion)
        throw VersionMismatch(path + ": checkpoint version " + std::to_string(version));
    std::uint64_t hlen = 0;
    f.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    std::string hs(hlen, '\0');
    f.read(hs.data(), static_cast<std::streamsize>(hlen));
    if (f.gcount() != static_cast<std::streamsize>(hlen))
        throw IoError(path + ": truncated header");
    json header;
    try {
        header = json::parse(hs);
    } catch (const json::exception& e) {
        throw IoError(path + ": bad header: " + e.what());
    }

    Model m = Model::build(config_from_json(header.at("config")),
                           header.at("kind").get<std::string>() == "mae" ? ModelKind::mae
                                                                         : ModelKind::segmentation,
                           header.at("seed").get<std::uint64_t>());
    if (stage_tag) *stage_tag = header.at("stage").get<std::string>();

    for (const auto& e : header.at("params")) {
        const std::string name = e.at("name").get<std::string>();
        const Shape shape = e.at("shape").get<Shape>();
        if (!m.params.has(name)) throw ShapeConflict(path + ": unexpected parameter " + name);
        Tensor& t = m.params.at(name);
        if (t.shape != shape)
            throw ShapeConflict(path + ": parameter " + name + " has conflicting shape");
        f.read(reinterpret_cast<char*>(t.mptr()),
               static_cast<std::streamsize>(t.numel() * sizeof(float)));
        if (f.gcount() != static_cast<std::streamsize>(t.numel() * sizeof(float)))
            throw ShapeConflict(path + ": payload shorter than parameter directory");
    }
    return m;
}

LoadReport load_encoder_into(Model& dst, const Model& src) {
    LoadReport r;
    for (auto& [name, t] : dst.params.by_name) {
        if (name.rfind("enc.", 0) == 0) {
            if (!src.params.has(name))
                throw ShapeConflict("encoder parameter " + name + " missing from source");
            const Tensor& s = src.params.at(name);
            if (s.shape != t.shape)
                throw ShapeConflict("encoder parameter " + name + " has conflicting shape");
            t.mut() = s.data();
            ++r.copied;
        } else {
            ++r.fresh;
        }
    }
    return r;
}

}  // namespace vxls
