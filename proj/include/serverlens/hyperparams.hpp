#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <variant>

#include "json.hpp"

namespace serverlens {

using ParamValue = std::variant<double, std::int64_t, std::string>;

// name -> typed value. Ordered so that printing and serialisation are stable.
class HyperParams {
public:
    HyperParams() = default;

    void set(std::string name, ParamValue value) { values_[std::move(name)] = std::move(value); }
    bool contains(std::string_view name) const { return values_.find(std::string(name)) != values_.end(); }

    // Integers convert to real; tokens do not.
    double real(std::string_view name) const;
    std::int64_t integer(std::string_view name) const;
    const std::string& token(std::string_view name) const;

    double real_or(std::string_view name, double fallback) const;
    std::int64_t integer_or(std::string_view name, std::int64_t fallback) const;

    const std::map<std::string, ParamValue, std::less<>>& values() const noexcept { return values_; }
    std::size_t size() const noexcept { return values_.size(); }

    // "name=value;name=value"
    std::string to_string() const;

    bool operator==(const HyperParams&) const = default;

private:
    const ParamValue& at(std::string_view name) const;
    std::map<std::string, ParamValue, std::less<>> values_;
};

nlohmann::json to_json(const HyperParams& hp);
HyperParams hyperparams_from_json(const nlohmann::json& j);

}  // namespace serverlens
