#include "bseg/checkpoint.hpp"

#include <nlohmann/json.hpp>

#include <cstring>
#include <fstream>

namespace bseg {

using nlohmann::json;

namespace {

json backbone_to_json(const BackboneConfig& b) {
    return json{{"stem_channels", b.stem_channels},
                {"stage_channels", b.stage_channels},
                {"blocks_per_stage", b.blocks_per_stage}};
}

BackboneConfig backbone_from_json(const json& j) {
    BackboneConfig b;
    b.stem_channels = j.at("stem_channels").get<int64_t>();
    auto sc = j.at("stage_channels").get<std::vector<int64_t>>();
    auto bp = j.at("blocks_per_stage").get<std::vector<int64_t>>();
    if (sc.size() != 4 || bp.size() != 4)
        throw CheckpointError("checkpoint: backbone config must have 4 stages");
    std::copy(sc.begin(), sc.end(), b.stage_channels.begin());
    std::copy(bp.begin(), bp.end(), b.blocks_per_stage.begin());
    return b;
}

json model_to_json(const ModelConfig& m) {
    return json{{"variant", to_string(m.variant)},
                {"backbone", backbone_to_json(m.backbone)},
                {"vit_dmodel", m.vit_dmodel},
                {"heads", m.heads},
                {"classes", m.classes},
                {"boundary_width", m.boundary_width},
                {"image_size", m.image_size},
                {"vit_channels", m.vit_channels},
                {"bem_channels", m.bem_channels},
                {"decoder_channels", m.decoder_channels}};
}

ModelConfig model_from_json(const json& j) {
    ModelConfig m;
    m.variant = variant_from_string(j.at("variant").get<std::string>());
    m.backbone = backbone_from_json(j.at("backbone"));
    m.vit_dmodel = j.at("vit_dmodel").get<int64_t>();
    m.heads = j.at("heads").get<int64_t>();
    m.classes = j.at("classes").get<int64_t>();
    m.boundary_width = j.at("boundary_width").get<int>();
    m.image_size = j.at("image_size").get<int64_t>();
    m.vit_channels = j.at("vit_channels").get<int64_t>();
    m.bem_channels = j.at("bem_channels").get<int64_t>();
    m.decoder_channels = j.at("decoder_channels").get<int64_t>();
    return m;
}

json train_to_json(const TrainConfig& t) {
    return json{{"lr", t.lr},         {"batch", t.batch},
                {"epochs", t.epochs}, {"image_size", t.image_size},
                {"alpha", t.alpha},   {"seed", t.seed},
                {"checkpoint_dir", t.checkpoint_dir}, {"boundary_width", t.boundary_width}};
}

TrainConfig train_from_json(const json& j) {
    TrainConfig t;
    t.lr = j.at("lr").get<double>();
    t.batch = j.at("batch").get<int64_t>();
    t.epochs = j.at("epochs").get<int64_t>();
    t.image_size = j.at("image_size").get<int64_t>();
    t.alpha = j.at("alpha").get<double>();
    t.seed = j.at("seed").get<uint64_t>();
    t.checkpoint_dir = j.at("checkpoint_dir").get<std::string>();
    t.boundary_width = j.at("boundary_width").get<int>();
    return t;
}

constexpr char kMagic[8] = {'B', 'S', 'E', 'G', 'C', 'K', 'P', 'T'};

template <typename T>
void write_pod(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw CheckpointError("checkpoint: truncated file");
    return v;
}

void write_blob(std::ostream& os, const std::string& name, const Tensor& t) {
    write_pod<uint32_t>(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod<uint32_t>(os, static_cast<uint32_t>(t.ndim()));
    for (int i = 0; i < t.ndim(); ++i) write_pod<int64_t>(os, t.dim(i));
    os.write(reinterpret_cast<const char*>(t.data()),
             static_cast<std::streamsize>(t.numel() * sizeof(double)));
}

std::pair<std::string, Tensor> read_blob(std::istream& is) {
    const uint32_t name_len = read_pod<uint32_t>(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    const uint32_t ndim = read_pod<uint32_t>(is);
    Shape shape(ndim);
    for (uint32_t i = 0; i < ndim; ++i) shape[i] = read_pod<int64_t>(is);
    Tensor t(shape);
    is.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.numel() * sizeof(double)));
    if (!is) throw CheckpointError("checkpoint: truncated blob '" + name + "'");
    return {std::move(name), std::move(t)};
}

}  // namespace

void save_checkpoint(const std::string& path, const Model& model, const TrainConfig& train_cfg,
                     int64_t epoch, int64_t step, const Adam* opt) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw CheckpointError("checkpoint: cannot open for writing: " + path);
    os.write(kMagic, sizeof(kMagic));
    write_pod<uint32_t>(os, kCheckpointVersion);

    const json header{{"model", model_to_json(model.config())},
                      {"train", train_to_json(train_cfg)},
                      {"epoch", epoch},
                      {"step", step},
                      {"has_optimizer", opt != nullptr}};
    const std::string hs = header.dump();
    write_pod<uint64_t>(os, hs.size());
    os.write(hs.data(), static_cast<std::streamsize>(hs.size()));

    const auto& params = model.store().params();
    const auto& buffers = model.store().buffers();
    uint64_t n_blobs = params.size() + buffers.size();
    if (opt) n_blobs += 2 * opt->size() + 1;
    write_pod<uint64_t>(os, n_blobs);
    for (const auto& [name, var] : params) write_blob(os, name, var->value);
    for (const auto& [name, var] : buffers) write_blob(os, name, var->value);
    if (opt) {
        for (size_t i = 0; i < opt->size(); ++i) {
            write_blob(os, "adam.m." + params[i].first, opt->m(i));
            write_blob(os, "adam.v." + params[i].first, opt->v(i));
        }
        write_blob(os, "adam.t", Tensor::scalar(static_cast<double>(opt->t())));
    }
    if (!os) throw CheckpointError("checkpoint: write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw CheckpointError("checkpoint: cannot open: " + path);
    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw CheckpointError("checkpoint: bad magic in " + path);
    const uint32_t version = read_pod<uint32_t>(is);
    if (version != kCheckpointVersion)
        throw CheckpointError("checkpoint: unsupported version " + std::to_string(version));
    const uint64_t json_len = read_pod<uint64_t>(is);
    std::string hs(json_len, '\0');
    is.read(hs.data(), static_cast<std::streamsize>(json_len));
    if (!is) throw CheckpointError("checkpoint: truncated header");
    json header = json::parse(hs, nullptr, /*allow_exceptions=*/false);
    if (header.is_discarded()) throw CheckpointError("checkpoint: corrupt JSON header");

    Checkpoint ck;
    ck.model_cfg = model_from_json(header.at("model"));
    ck.train_cfg = train_from_json(header.at("train"));
    ck.epoch = header.at("epoch").get<int64_t>();
    ck.step = header.at("step").get<int64_t>();
    ck.has_optimizer = header.at("has_optimizer").get<bool>();

    // Seed is irrelevant here: every tensor is overwritten from the blobs.
    ck.model = std::make_unique<Model>(ck.model_cfg, 0);

    std::unordered_map<std::string, Tensor> blobs;
    const uint64_t n_blobs = read_pod<uint64_t>(is);
    for (uint64_t i = 0; i < n_blobs; ++i) {
        auto [name, tensor] = read_blob(is);
        blobs.emplace(std::move(name), std::move(tensor));
    }

    auto restore = [&](const std::string& name, Var var) {
        auto it = blobs.find(name);
        if (it == blobs.end()) throw CheckpointError("checkpoint: missing blob '" + name + "'");
        if (!(it->second.shape() == var->value.shape()))
            throw CheckpointError("checkpoint: shape mismatch for '" + name + "': file " +
                                  shape_str(it->second.shape()) + " vs model " +
                                  shape_str(var->value.shape()));
        var->value = it->second;
    };
    for (const auto& [name, var] : ck.model->store().params()) restore(name, var);
    for (const auto& [name, var] : ck.model->store().buffers()) restore(name, var);

    if (ck.has_optimizer) {
        for (const auto& [name, var] : ck.model->store().params()) {
            auto mit = blobs.find("adam.m." + name);
            auto vit = blobs.find("adam.v." + name);
            if (mit == blobs.end() || vit == blobs.end())
                throw CheckpointError("checkpoint: missing optimizer state for '" + name + "'");
            ck.adam_m.push_back(mit->second);
            ck.adam_v.push_back(vit->second);
        }
        auto tit = blobs.find("adam.t");
        if (tit == blobs.end()) throw CheckpointError("checkpoint: missing adam.t");
        ck.adam_t = static_cast<int64_t>(tit->second[0]);
    }
    return ck;
}

Adam Checkpoint::make_optimizer() const {
    std::vector<Var> params;
    for (const auto& [name, var] : model->store().params()) params.push_back(var);
    Adam opt(std::move(params), train_cfg.lr);
    if (has_optimizer) opt.restore(adam_m, adam_v, adam_t);
    return opt;
}

}  // namespace bseg
