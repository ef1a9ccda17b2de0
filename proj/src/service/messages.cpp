#include "wavespace/service/messages.hpp"

#include <cmath>
#include <numbers>

#include "wavespace/errors.hpp"

namespace wavespace::service {

namespace {

double number(const nlohmann::json& j, const char* key)
{
    if (!j.contains(key) || !j.at(key).is_number()) {
        throw FormatError(std::string("field '") + key + "' must be a number");
    }
    const double v = j.at(key).get<double>();
    if (!std::isfinite(v)) throw RangeError(std::string("field '") + key + "' must be finite");
    return v;
}

void check_range(const char* what, double v, double lo, double hi)
{
    if (!(v >= lo && v <= hi)) {
        throw RangeError(std::string(what) + " " + std::to_string(v) + " outside [" + std::to_string(lo) + ", " +
                         std::to_string(hi) + "]");
    }
}

} // namespace

ControlMessage parse_message(const nlohmann::json& j)
{
    if (!j.is_object() || !j.contains("type") || !j.at("type").is_string()) {
        throw FormatError("message must be an object with a string 'type'");
    }
    const auto type = j.at("type").get<std::string>();
    if (type == "set_style") {
        if (!j.contains("subspace") || !j.at("subspace").is_number_integer() || j.at("subspace").get<long long>() < 0) {
            throw FormatError("field 'subspace' must be a non-negative integer");
        }
        SetStyle m{j.at("subspace").get<std::size_t>(), number(j, "x"), number(j, "y")};
        check_range("style x", m.x, -style_limit, style_limit);
        check_range("style y", m.y, -style_limit, style_limit);
        return m;
    }
    if (type == "set_descriptor") {
        if (!j.contains("name") || !j.at("name").is_string()) throw FormatError("field 'name' must be a string");
        SetDescriptor m;
        try {
            m.which = parse_descriptor(j.at("name").get<std::string>());
        } catch (const ConfigError& e) {
            throw RangeError(e.what());
        }
        m.value = number(j, "value");
        if (m.which == Descriptor::symmetry) {
            check_range("symmetry", m.value, -std::numbers::pi, std::numbers::pi);
        } else {
            check_range(j.at("name").get<std::string>().c_str(), m.value, 0.0, 1.0);
        }
        return m;
    }
    if (type == "encode_init") {
        if (!j.contains("samples") || !j.at("samples").is_array()) throw FormatError("field 'samples' must be an array");
        EncodeInit m;
        for (const auto& v : j.at("samples")) {
            if (!v.is_number()) throw FormatError("samples must be numbers");
            m.samples.push_back(v.get<double>());
            if (!std::isfinite(m.samples.back())) throw RangeError("samples must be finite");
        }
        return m;
    }
    if (type == "note") {
        if (!j.contains("gate") || !j.at("gate").is_boolean()) throw FormatError("field 'gate' must be a boolean");
        Note m{number(j, "f0"), j.at("gate").get<bool>()};
        check_range("f0", m.f0, 0.0, 20000.0);
        return m;
    }
    if (type == "envelope") {
        EnvelopeSettings m{number(j, "attack"), number(j, "decay"), number(j, "sustain"), number(j, "release")};
        check_range("attack", m.attack, 0.0, 60.0);
        check_range("decay", m.decay, 0.0, 60.0);
        check_range("sustain", m.sustain, 0.0, 1.0);
        check_range("release", m.release, 0.0, 60.0);
        return m;
    }
    if (type == "gain") {
        Gain m{number(j, "linear")};
        check_range("gain", m.linear, 0.0, 4.0);
        return m;
    }
    throw FormatError("unknown message type '" + type + "'");
}

ControlMessage parse_message(const std::string& text)
{
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError(std::string("malformed JSON: ") + e.what());
    }
    return parse_message(j);
}

nlohmann::json to_json(const ControlMessage& m)
{
    return std::visit(
        [](const auto& v) -> nlohmann::json {
            using M = std::decay_t<decltype(v)>;
            if constexpr (std::is_same_v<M, SetStyle>) {
                return {{"type", "set_style"}, {"subspace", v.subspace}, {"x", v.x}, {"y", v.y}};
            } else if constexpr (std::is_same_v<M, SetDescriptor>) {
                return {{"type", "set_descriptor"},
                        {"name", descriptor_names[static_cast<std::size_t>(v.which)]},
                        {"value", v.value}};
            } else if constexpr (std::is_same_v<M, EncodeInit>) {
                return {{"type", "encode_init"}, {"samples", v.samples}};
            } else if constexpr (std::is_same_v<M, Note>) {
                return {{"type", "note"}, {"f0", v.f0}, {"gate", v.gate}};
            } else if constexpr (std::is_same_v<M, EnvelopeSettings>) {
                return {{"type", "envelope"}, {"attack", v.attack}, {"decay", v.decay},
                        {"sustain", v.sustain}, {"release", v.release}};
            } else {
                return {{"type", "gain"}, {"linear", v.linear}};
            }
        },
        m);
}

nlohmann::json error_frame(const std::string& message)
{
    return {{"type", "error"}, {"message", message}};
}

} // namespace wavespace::service
