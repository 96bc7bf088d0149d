#include "cortexflow/checkpoint.hpp"

#include <json.hpp>

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace cortexflow {

using nlohmann::json;

namespace {

constexpr const char* kMagic = "CORTEXFLOW-CHECKPOINT 1";

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

json model_json(const ModelConfig& c) {
    return json{{"profile", c.profile},   {"encoder", c.encoder}, {"decoder", c.decoder},
                {"levels", c.levels},     {"graph_channels", c.graph_channels},
                {"graph_depth", c.graph_depth}, {"k_wm", c.k_wm}, {"k_gm", c.k_gm},
                {"gm_hidden", c.gm_hidden}, {"template_vertices", c.template_vertices},
                {"prelu_init", c.prelu_init}};
}

ModelConfig model_from(const json& j) {
    ModelConfig c = ModelConfig::from_profile(j.value("profile", std::string("full")));
    c.encoder = j.value("encoder", c.encoder);
    c.decoder = j.value("decoder", c.decoder);
    c.levels = j.value("levels", c.levels);
    c.graph_channels = j.value("graph_channels", c.graph_channels);
    c.graph_depth = j.value("graph_depth", c.graph_depth);
    c.k_wm = j.value("k_wm", c.k_wm);
    c.k_gm = j.value("k_gm", c.k_gm);
    c.gm_hidden = j.value("gm_hidden", c.gm_hidden);
    c.template_vertices = j.value("template_vertices", c.template_vertices);
    c.prelu_init = j.value("prelu_init", c.prelu_init);
    c.validate();
    return c;
}

}  // namespace

const NamedArray* CheckpointData::find(const std::string& name) const {
    for (const auto& a : arrays)
        if (a.name == name) return &a;
    return nullptr;
}

std::string to_json(const ModelConfig& c) { return model_json(c).dump(); }

ModelConfig model_config_from_json(const std::string& text) {
    try {
        return model_from(json::parse(text));
    } catch (const json::exception& e) {
        throw std::invalid_argument(std::string("model config: ") + e.what());
    }
}

void write_checkpoint(const std::filesystem::path& path, const CheckpointData& data) {
    json header;
    header["model"] = model_json(data.model);
    header["init_seed"] = data.init_seed;
    header["iteration"] = data.iteration;
    header["state"] = json::parse(data.state_json);
    json table = json::array();
    std::size_t offset = 0;
    for (const auto& a : data.arrays) {
        std::size_t n = 1;
        for (int d : a.shape) n *= static_cast<std::size_t>(d);
        if (n != a.values.size()) throw std::invalid_argument("checkpoint: array '" + a.name + "' size does not match its shape");
        table.push_back({{"name", a.name}, {"shape", a.shape}, {"offset", offset}});
        offset += n * sizeof(float);
    }
    header["tensors"] = table;
    header["bytes"] = offset;

    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write checkpoint " + tmp);
        out << kMagic << '\n' << header.dump() << '\n';
        std::vector<float> buf;
        for (const auto& a : data.arrays) {
            buf.assign(a.values.begin(), a.values.end());
            out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
        }
        if (!out) throw std::runtime_error("failed writing checkpoint " + tmp);
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw std::runtime_error("cannot write checkpoint " + path.string() + ": " + ec.message());
}

CheckpointData read_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
    std::string magic, line;
    std::getline(in, magic);
    if (magic != kMagic) throw std::runtime_error("not a cortexflow checkpoint: " + path.string());
    std::getline(in, line);
    CheckpointData data;
    json header;
    try {
        header = json::parse(line);
        data.model = model_from(header.at("model"));
        data.init_seed = header.value("init_seed", std::uint64_t{0});
        data.iteration = header.at("iteration").get<std::int64_t>();
        data.state_json = header.value("state", json::object()).dump();
    } catch (const json::exception& e) {
        throw std::runtime_error("malformed checkpoint header in " + path.string() + ": " + e.what());
    }
    const auto bytes = header.value("bytes", std::size_t{0});
    std::vector<char> blob(bytes);
    in.read(blob.data(), static_cast<std::streamsize>(bytes));
    if (static_cast<std::size_t>(in.gcount()) != bytes) throw std::runtime_error("truncated checkpoint " + path.string());
    for (const auto& t : header.at("tensors")) {
        NamedArray a;
        a.name = t.at("name").get<std::string>();
        a.shape = t.at("shape").get<std::vector<int>>();
        const auto off = t.at("offset").get<std::size_t>();
        std::size_t n = 1;
        for (int d : a.shape) n *= static_cast<std::size_t>(d);
        if (off + n * sizeof(float) > bytes) throw std::runtime_error("checkpoint tensor '" + a.name + "' out of bounds");
        std::vector<float> buf(n);
        std::memcpy(buf.data(), blob.data() + off, n * sizeof(float));
        a.values.assign(buf.begin(), buf.end());
        data.arrays.push_back(std::move(a));
    }
    return data;
}

CheckpointData snapshot(const Network& net, std::uint64_t init_seed) {
    CheckpointData d;
    d.model = net.config();
    d.init_seed = init_seed;
    for (const auto& p : net.params().all()) d.arrays.push_back({"param/" + p.name(), p.shape(), p.values()});
    return d;
}

Network load_network(const CheckpointData& data) {
    Network net(data.model, data.init_seed);
    for (const auto& p : net.params().all()) {
        const NamedArray* a = data.find("param/" + p.name());
        if (!a) throw std::invalid_argument("checkpoint is missing parameter '" + p.name() + "'");
        if (a->shape != p.shape()) throw std::invalid_argument("checkpoint parameter '" + p.name() + "' has the wrong shape");
        p.node()->value = a->values;
    }
    return net;
}

}  // namespace cortexflow
