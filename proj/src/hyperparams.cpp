#include "serverlens/hyperparams.hpp"

#include <charconv>
#include <sstream>

#include "serverlens/common.hpp"

namespace serverlens {

const ParamValue& HyperParams::at(std::string_view name) const {
    const auto it = values_.find(name);
    if (it == values_.end()) {
        throw ArgumentError("hyperparameter '" + std::string(name) + "' not set");
    }
    return it->second;
}

double HyperParams::real(std::string_view name) const {
    const auto& v = at(name);
    if (const auto* d = std::get_if<double>(&v)) return *d;
    if (const auto* i = std::get_if<std::int64_t>(&v)) return static_cast<double>(*i);
    throw ArgumentError("hyperparameter '" + std::string(name) + "' is categorical, expected a number");
}

std::int64_t HyperParams::integer(std::string_view name) const {
    const auto& v = at(name);
    if (const auto* i = std::get_if<std::int64_t>(&v)) return *i;
    throw ArgumentError("hyperparameter '" + std::string(name) + "' is not an integer");
}

const std::string& HyperParams::token(std::string_view name) const {
    const auto& v = at(name);
    if (const auto* s = std::get_if<std::string>(&v)) return *s;
    throw ArgumentError("hyperparameter '" + std::string(name) + "' is not categorical");
}

double HyperParams::real_or(std::string_view name, double fallback) const {
    return contains(name) ? real(name) : fallback;
}

std::int64_t HyperParams::integer_or(std::string_view name, std::int64_t fallback) const {
    return contains(name) ? integer(name) : fallback;
}

std::string HyperParams::to_string() const {
    std::ostringstream out;
    bool first = true;
    for (const auto& [name, value] : values_) {
        if (!first) out << ';';
        first = false;
        out << name << '=';
        std::visit(
            [&](const auto& x) {
                using T = std::decay_t<decltype(x)>;
                if constexpr (std::is_same_v<T, double>) {
                    char buf[64];
                    const auto res = std::to_chars(buf, buf + sizeof(buf), x);
                    out << std::string_view(buf, static_cast<std::size_t>(res.ptr - buf));
                } else {
                    out << x;
                }
            },
            value);
    }
    return out.str();
}

nlohmann::json to_json(const HyperParams& hp) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [name, value] : hp.values()) {
        std::visit([&](const auto& x) { j[name] = x; }, value);
    }
    return j;
}

HyperParams hyperparams_from_json(const nlohmann::json& j) {
    if (!j.is_object()) {
        throw ParseError("hyperparameters must be a JSON object");
    }
    HyperParams hp;
    for (const auto& [name, value] : j.items()) {
        if (value.is_number_float()) {
            hp.set(name, value.get<double>());
        } else if (value.is_number_integer()) {
            hp.set(name, value.get<std::int64_t>());
        } else if (value.is_string()) {
            hp.set(name, value.get<std::string>());
        } else {
            throw ParseError("hyperparameter '" + name + "' has an unsupported JSON type");
        }
    }
    return hp;
}

}  // namespace serverlens
