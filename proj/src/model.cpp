#include "salfom/model.hpp"

#include <fstream>
#include <map>

#include "salfom/error.hpp"
#include "salfom/tensor_io.hpp"

namespace salfom {

namespace {

SaliencyMap to_map(const Tensor& m) {
    SaliencyMap s;
    s.height = m.dim(0);
    s.width = m.dim(1);
    s.data.assign(m.data().begin(), m.data().end());
    return s;
}

}  // namespace

SaliencyModel::SaliencyModel(const ModelConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    nn::Rng rng(cfg_.init_seed);
    encoder_ = Encoder(cfg_.encoder, rng);
    decoder_ = Decoder(cfg_, rng);
}

Tensor SaliencyModel::forward(const Tensor& clip) const { return decoder_.forward(encoder_.forward(clip)).map; }

Tensor SaliencyModel::forward_features(const Tensor& features) const { return decoder_.forward(features).map; }

SaliencyMap SaliencyModel::predict(const VideoClip& clip) const {
    clip.validate();
    NoGradGuard no_grad;
    return to_map(forward(clip.to_tensor()));
}

SaliencyMap SaliencyModel::predict_features(const FeatureVolume& features) const {
    NoGradGuard no_grad;
    return to_map(forward_features(features.to_tensor()));
}

std::vector<std::pair<std::string, Tensor>> SaliencyModel::named_parameters() {
    std::vector<std::pair<std::string, Tensor>> out;
    encoder_.visit("encoder.", [&](const std::string& name, Tensor& t) { out.emplace_back(name, t); });
    decoder_.visit("decoder.", [&](const std::string& name, Tensor& t) { out.emplace_back(name, t); });
    return out;
}

std::vector<std::pair<std::string, Tensor>> SaliencyModel::decoder_parameters() {
    std::vector<std::pair<std::string, Tensor>> out;
    decoder_.visit("decoder.", [&](const std::string& name, Tensor& t) { out.emplace_back(name, t); });
    return out;
}

std::int64_t SaliencyModel::parameter_count() {
    std::int64_t n = 0;
    for (const auto& [name, t] : named_parameters()) n += t.numel();
    return n;
}

void SaliencyModel::save(const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open checkpoint for writing: " + path.string());
    os.write(kCheckpointMagic.data(), static_cast<std::streamsize>(kCheckpointMagic.size()));
    io::write_u32(os, kCheckpointVersion);
    const std::string cfg = to_json(cfg_).dump();
    io::write_u64(os, cfg.size());
    os.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
    const auto params = named_parameters();
    io::write_u32(os, static_cast<std::uint32_t>(params.size()));
    for (const auto& [name, t] : params) {
        if (t.rank() > 4) throw ShapeError("parameter " + name + " has rank above 4");
        io::write_u32(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        io::write_tensor_block(os, io::pad_dims(t.shape()), io::DType::f64, t.data());
    }
    os.flush();
    if (!os) throw IoError("failed writing checkpoint: " + path.string());
}

SaliencyModel SaliencyModel::load(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint: " + path.string());
    const auto fail = [&](const std::string& what) { return FormatError(path.string() + ": " + what); };

    std::string magic(kCheckpointMagic.size(), '\0');
    is.read(magic.data(), static_cast<std::streamsize>(magic.size()));
    if (!is || magic != kCheckpointMagic) throw fail("not a checkpoint file");
    try {
        if (io::read_u32(is) != kCheckpointVersion) throw fail("unsupported checkpoint version");
        const auto cfg_len = io::read_u64(is);
        if (cfg_len > (1u << 24)) throw fail("implausible config length");
        std::string cfg_text(cfg_len, '\0');
        is.read(cfg_text.data(), static_cast<std::streamsize>(cfg_len));
        if (!is) throw fail("truncated config");
        nlohmann::json cfg_json;
        try {
            cfg_json = nlohmann::json::parse(cfg_text);
        } catch (const nlohmann::json::exception& ex) {
            throw fail(std::string("corrupt config: ") + ex.what());
        }
        SaliencyModel model(model_config_from_json(cfg_json));

        std::map<std::string, Tensor> by_name;
        for (auto& [name, t] : model.named_parameters()) by_name.emplace(name, t);
        const auto count = io::read_u32(is);
        if (count != by_name.size()) {
            throw fail("stores " + std::to_string(count) + " tensors, config needs " +
                       std::to_string(by_name.size()));
        }
        for (std::uint32_t k = 0; k < count; ++k) {
            const auto len = io::read_u32(is);
            if (len > 4096) throw fail("implausible tensor name length");
            std::string name(len, '\0');
            is.read(name.data(), len);
            if (!is) throw fail("truncated tensor name");
            auto it = by_name.find(name);
            if (it == by_name.end()) throw fail("unexpected tensor '" + name + "'");
            const auto block = io::read_tensor_block(is);
            Tensor& t = it->second;
            if (block.dtype != io::DType::f64 || block.dims != io::pad_dims(t.shape())) {
                throw ShapeError(path.string() + ": tensor '" + name + "' does not match the config shape " +
                                 shape_str(t.shape()));
            }
            std::copy(block.values.begin(), block.values.end(), t.mutable_data().begin());
            by_name.erase(it);
        }
        if (is.peek() != std::char_traits<char>::eof()) throw fail("trailing bytes");
        return model;
    } catch (const FormatError& ex) {
        const std::string msg = ex.what();
        if (msg.rfind(path.string(), 0) == 0) throw;
        throw fail(msg);
    }
}

}  // namespace salfom
