#pragma once

#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "wavespace/descriptors.hpp"

namespace wavespace::service {

/// Style pad coordinates accepted from clients.
inline constexpr double style_limit = 8.0;

struct SetStyle {
    std::size_t subspace = 0;
    double x = 0.0;
    double y = 0.0;
};
struct SetDescriptor {
    Descriptor which = Descriptor::brightness;
    double value = 0.0;
};
struct EncodeInit {
    std::vector<double> samples;
};
struct Note {
    double f0 = 440.0;
    bool gate = false;
};
struct EnvelopeSettings {
    double attack = 0.01;
    double decay = 0.1;
    double sustain = 0.8;
    double release = 0.2;

    bool operator==(const EnvelopeSettings&) const = default;
};
struct Gain {
    double linear = 1.0;
};

using ControlMessage = std::variant<SetStyle, SetDescriptor, EncodeInit, Note, EnvelopeSettings, Gain>;

/// Parses an inbound frame. Throws FormatError when fields are missing or
/// mistyped and RangeError when values are outside their declared ranges.
ControlMessage parse_message(const nlohmann::json& j);
ControlMessage parse_message(const std::string& text);

nlohmann::json to_json(const ControlMessage& m);

nlohmann::json error_frame(const std::string& message);

} // namespace wavespace::service
