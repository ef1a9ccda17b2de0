#include "wavespace/model/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "wavespace/errors.hpp"

namespace wavespace::model {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");
static_assert(sizeof(float) == 4);

namespace {

constexpr char magic[4] = {'W', 'S', 'P', 'C'};
using Kind = CheckpointError::Kind;

template <class V>
void put(std::ofstream& out, const V& v)
{
    out.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

void put_tensor(std::ofstream& out, const std::string& name, const Tensor<float>& t)
{
    put<std::uint64_t>(out, name.size());
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint64_t>(out, t.size());
    out.write(reinterpret_cast<const char*>(t.data.data()),
              static_cast<std::streamsize>(t.size() * sizeof(float)));
}

class Reader {
public:
    explicit Reader(const std::filesystem::path& path) : in_(path, std::ios::binary), path_(path)
    {
        if (!in_) throw CheckpointError(Kind::io, "cannot open checkpoint " + path.string());
    }

    void bytes(void* dst, std::size_t n, const char* what)
    {
        in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in_.gcount()) != n) {
            throw CheckpointError(Kind::truncated, path_.string() + ": truncated while reading " + what);
        }
    }

    template <class V>
    V get(const char* what)
    {
        V v{};
        bytes(&v, sizeof(V), what);
        return v;
    }

    nlohmann::json header()
    {
        char m[4];
        bytes(m, 4, "magic");
        if (std::memcmp(m, magic, 4) != 0) {
            throw CheckpointError(Kind::format, path_.string() + " is not a wavespace checkpoint");
        }
        const auto version = get<std::uint32_t>("version");
        if (version != checkpoint_version) {
            throw CheckpointError(Kind::version, path_.string() + ": checkpoint version " +
                                                     std::to_string(version) + ", expected " +
                                                     std::to_string(checkpoint_version));
        }
        const auto size = get<std::uint64_t>("header size");
        if (size > (std::uint64_t{1} << 30)) {
            throw CheckpointError(Kind::format, path_.string() + ": implausible header size");
        }
        std::string text(size, '\0');
        bytes(text.data(), size, "header");
        try {
            return nlohmann::json::parse(text);
        } catch (const nlohmann::json::exception& e) {
            throw CheckpointError(Kind::format, path_.string() + ": bad header: " + e.what());
        }
    }

    void tensor(const std::string& expected_name, Tensor<float>& t)
    {
        const auto name_size = get<std::uint64_t>("tensor name size");
        if (name_size > 4096) throw CheckpointError(Kind::format, path_.string() + ": bad tensor name");
        std::string name(name_size, '\0');
        bytes(name.data(), name_size, "tensor name");
        if (name != expected_name) {
            throw CheckpointError(Kind::name_mismatch, path_.string() + ": found tensor '" + name +
                                                           "', expected '" + expected_name + "'");
        }
        const auto count = get<std::uint64_t>("tensor size");
        if (count != t.size()) {
            throw CheckpointError(Kind::name_mismatch,
                                  path_.string() + ": tensor '" + name + "' holds " +
                                      std::to_string(count) + " values, expected " +
                                      std::to_string(t.size()));
        }
        bytes(t.data.data(), count * sizeof(float), name.c_str());
    }

    bool at_end() { return in_.peek() == std::ifstream::traits_type::eof(); }

private:
    std::ifstream in_;
    std::filesystem::path path_;
};

} // namespace

void save_checkpoint(const std::filesystem::path& path, const Model<float>& model,
                     const TrainerState* trainer)
{
    nlohmann::json header = {
        {"format", "wavespace-checkpoint"},
        {"config", model.config()},
        {"styles", model.styles()},
        {"priors", model.priors()},
        {"parameter_count", model.parameter_count()},
        {"batchnorm",
         {{"epsilon", model.config().bn_epsilon}, {"momentum", model.config().bn_momentum}}},
    };
    if (trainer != nullptr) {
        header["trainer"] = {{"epoch", trainer->epoch}, {"step", trainer->step}, {"config", trainer->config}};
        if (trainer->adam_m.size() != model.parameters().size() ||
            trainer->adam_v.size() != model.parameters().size()) {
            throw CheckpointError(Kind::format, "optimizer state does not match the parameter list");
        }
    }
    const std::string text = header.dump();

    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw CheckpointError(Kind::io, "cannot write checkpoint " + tmp.string());
        out.write(magic, 4);
        put<std::uint32_t>(out, checkpoint_version);
        put<std::uint64_t>(out, text.size());
        out.write(text.data(), static_cast<std::streamsize>(text.size()));
        for (const auto& p : model.parameters()) put_tensor(out, p.name, p.value);
        for (const auto& s : model.batchnorm_states()) {
            put_tensor(out, s.name + ".running_mean", s.running_mean);
            put_tensor(out, s.name + ".running_var", s.running_var);
        }
        if (trainer != nullptr) {
            for (std::size_t i = 0; i < trainer->adam_m.size(); ++i) {
                put_tensor(out, "adam.m." + model.parameters()[i].name, trainer->adam_m[i]);
                put_tensor(out, "adam.v." + model.parameters()[i].name, trainer->adam_v[i]);
            }
        }
        out.flush();
        if (!out) throw CheckpointError(Kind::io, "write failed for " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw CheckpointError(Kind::io, "cannot move checkpoint into place: " + ec.message());
}

nlohmann::json read_checkpoint_header(const std::filesystem::path& path)
{
    Reader r(path);
    return r.header();
}

Checkpoint load_checkpoint(const std::filesystem::path& path)
{
    Reader r(path);
    Checkpoint c;
    c.header = r.header();
    try {
        auto config = c.header.at("config").get<ArchitectureConfig>();
        auto styles = c.header.at("styles").get<std::vector<std::string>>();
        c.model = Model<float>(std::move(config), std::move(styles), 0);
        c.model.priors() = c.header.at("priors").get<SubspacePriorTable>();
        if (c.model.priors().size() != c.model.config().num_styles) {
            throw CheckpointError(Kind::format, path.string() + ": prior table size mismatch");
        }
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(Kind::format, path.string() + ": bad header field: " + e.what());
    } catch (const ConfigError& e) {
        throw CheckpointError(Kind::format, path.string() + ": " + e.what());
    }
    for (auto& p : c.model.parameters()) r.tensor(p.name, p.value);
    for (auto& s : c.model.batchnorm_states()) {
        r.tensor(s.name + ".running_mean", s.running_mean);
        r.tensor(s.name + ".running_var", s.running_var);
    }
    if (c.header.contains("trainer")) {
        TrainerState t;
        const auto& h = c.header.at("trainer");
        h.at("epoch").get_to(t.epoch);
        h.at("step").get_to(t.step);
        t.config = h.at("config");
        for (const auto& p : c.model.parameters()) {
            t.adam_m.emplace_back(p.value.shape);
            r.tensor("adam.m." + p.name, t.adam_m.back());
            t.adam_v.emplace_back(p.value.shape);
            r.tensor("adam.v." + p.name, t.adam_v.back());
        }
        c.trainer = std::move(t);
    }
    if (!r.at_end()) throw CheckpointError(Kind::format, path.string() + ": trailing bytes");
    return c;
}

} // namespace wavespace::model
