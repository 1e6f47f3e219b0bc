#include "serverlens/service.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

namespace serverlens {

using nlohmann::json;

namespace {

json number(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

std::string lower(std::string_view s) {
    std::string out(s);
    for (auto& ch : out) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    return out;
}

ServiceResponse error_response(int status, const std::string& message, const std::string& field = {}) {
    json body = {{"error", message}};
    if (!field.empty()) body["field"] = field;
    return {status, std::move(body)};
}

// Schema column for every numeric request field; ddt and had_date are special.
constexpr std::size_t kDdtHdd = 12;
constexpr std::size_t kDdtSsd = 13;
constexpr std::size_t kHad = 14;

const FeatureRange* range_of(const ModelBundle& b, const std::string& column) {
    for (const auto& r : b.ranges)
        if (r.name == column) return &r;
    return nullptr;
}

json curve_json(const std::array<double, kLevelCount>& load, const std::array<double, kLevelCount>& values,
                const char* unit) {
    json pts = json::array();
    for (std::size_t i = 0; i < kLevelCount; ++i) pts.push_back({{"load", load[i]}, {unit, number(values[i])}});
    return pts;
}

}  // namespace

const std::vector<RequestField>& request_fields() {
    static const std::vector<RequestField> fields = {
        {"cc", "number", "chips", "CPU chip count"},
        {"cpc", "number", "cores/chip", "cores per chip"},
        {"tpc", "number", "threads/core", "threads per core"},
        {"cf", "number", "MHz", "CPU frequency"},
        {"cs_l1d", "number", "KB/core", "L1 data cache"},
        {"cs_l1i", "number", "KB/core", "L1 instruction cache"},
        {"cs_l2", "number", "MB/core", "L2 cache"},
        {"cs_l3", "number", "MB/chip", "L3 cache"},
        {"mmc", "number", "modules", "memory module count"},
        {"mms", "number", "GB/module", "memory module size"},
        {"ddc", "number", "drives", "disk drive count"},
        {"dds", "number", "GB/drive", "disk drive size"},
        {"ddt", "category", "", "disk drive type"},
        {"had_date", "date", "", "hardware availability date"},
    };
    return fields;
}

PredictionService::PredictionService(ModelBundle power, ModelBundle throughput, ModelBundle perf)
    : power_(std::move(power)), throughput_(std::move(throughput)), perf_(std::move(perf)) {
    if (power_.target != TargetKind::Power || throughput_.target != TargetKind::MaxThroughput ||
        perf_.target != TargetKind::PerfToPower) {
        throw ArgumentError("service needs the power, throughput and perf bundles in that order");
    }
    const auto& config = FeatureSchema::config_features();
    for (const ModelBundle* b : {&power_, &throughput_, &perf_}) {
        if (!std::equal(config.begin(), config.end(), b->schema.names.begin())) {
            throw ArgumentError("bundle for " + std::string(to_string(b->target)) + " has a different feature schema");
        }
    }
    checksums_[0] = bundle_checksum(power_);
    checksums_[1] = bundle_checksum(throughput_);
    checksums_[2] = bundle_checksum(perf_);
}

const ModelBundle& PredictionService::bundle(TargetKind target) const {
    switch (target) {
        case TargetKind::Power: return power_;
        case TargetKind::MaxThroughput: return throughput_;
        case TargetKind::PerfToPower: return perf_;
    }
    return power_;
}

ServiceResponse PredictionService::health() const {
    return {200,
            {{"status", "ok"},
             {"bundles",
              {{"power", {{"checksum", checksums_[0]}, {"learner", to_string(power_.learner)}}},
               {"throughput", {{"checksum", checksums_[1]}, {"learner", to_string(throughput_.learner)}}},
               {"perf", {{"checksum", checksums_[2]}, {"learner", to_string(perf_.learner)}}}}}}};
}

ServiceResponse PredictionService::schema() const {
    const auto& columns = FeatureSchema::config_features();
    json features = json::array();
    for (std::size_t f = 0; f < request_fields().size(); ++f) {
        const auto& field = request_fields()[f];
        json jf = {{"name", field.name}, {"type", field.type}, {"description", field.description}};
        if (!field.units.empty()) jf["units"] = field.units;
        if (field.name == "ddt") {
            jf["options"] = {"hdd", "ssd"};
            const auto* r = range_of(power_, columns[kDdtSsd]);
            jf["observed"] = r ? r->observed : 0;
        } else if (field.name == "had_date") {
            const auto* r = range_of(power_, columns[kHad]);
            if (r && r->observed > 0) {
                jf["min"] = format_date(ordinal_to_date(static_cast<std::int64_t>(r->min)));
                jf["max"] = format_date(ordinal_to_date(static_cast<std::int64_t>(r->max)));
            }
            jf["observed"] = r ? r->observed : 0;
        } else {
            const auto* r = range_of(power_, columns[f]);
            if (r && r->observed > 0) {
                jf["min"] = number(r->min);
                jf["max"] = number(r->max);
            }
            jf["observed"] = r ? r->observed : 0;
        }
        features.push_back(std::move(jf));
    }
    json loads = json::array();
    for (std::size_t i = 0; i < kLevelCount; ++i) loads.push_back(level_fraction(i));
    return {200,
            {{"features", std::move(features)},
             {"load_levels", std::move(loads)},
             {"targets",
              {{"power", {{"units", "W"}}},
               {"max_throughput", {{"units", "ssj_ops"}}},
               {"perf_to_power", {{"units", "ssj_ops/W"}}}}}}};
}

ServiceResponse PredictionService::importance() const {
    json body = json::object();
    for (const ModelBundle* b : {&power_, &throughput_, &perf_})
        body[std::string(to_string(b->target))] = b->importance ? importance_to_json(*b->importance) : json(nullptr);
    return {200, std::move(body)};
}

std::vector<double> PredictionService::parse_request(const json& request) const {
    if (!request.is_object()) throw ArgumentError("request body must be a JSON object");
    const auto& fields = request_fields();
    std::vector<double> row(FeatureSchema::config_features().size(), kMissing);
    for (const auto& [key, value] : request.items()) {
        const auto it = std::find_if(fields.begin(), fields.end(), [&](const RequestField& f) { return f.name == key; });
        if (it == fields.end()) throw ArgumentError("unknown field '" + key + "'");
        if (value.is_null()) continue;
        const std::size_t f = static_cast<std::size_t>(it - fields.begin());
        if (it->name == "ddt") {
            const std::string v = value.is_string() ? lower(value.get<std::string>()) : std::string();
            if (v != "hdd" && v != "ssd") throw ArgumentError("field 'ddt' must be \"hdd\" or \"ssd\"");
            row[kDdtHdd] = v == "hdd" ? 1.0 : 0.0;
            row[kDdtSsd] = v == "ssd" ? 1.0 : 0.0;
        } else if (it->name == "had_date") {
            if (!value.is_string()) throw ArgumentError("field 'had_date' must be a date string");
            try {
                row[kHad] = static_cast<double>(date_to_ordinal(parse_date(value.get<std::string>())));
            } catch (const ParseError& e) {
                throw ArgumentError("field 'had_date': " + std::string(e.what()));
            }
        } else {
            if (!value.is_number() || !std::isfinite(value.get<double>()))
                throw ArgumentError("field '" + key + "' must be a finite number");
            row[f] = value.get<double>();
        }
    }
    return row;
}

json PredictionService::predict_json(const json& request) const {
    const auto row = parse_request(request);
    const auto curve = predict_targets(power_, throughput_, perf_, row);

    const auto& columns = FeatureSchema::config_features();
    const auto& fields = request_fields();
    auto field_name = [&](const std::string& column) {
        const auto c = static_cast<std::size_t>(std::find(columns.begin(), columns.end(), column) - columns.begin());
        if (c == kDdtHdd || c == kDdtSsd) return std::string("ddt");
        return fields[c == kHad ? fields.size() - 1 : c].name;
    };
    json imputed = json::array();
    for (const auto& column : curve.imputed) {
        const auto name = field_name(column);
        if (imputed.empty() || imputed.back() != name) imputed.push_back(name);
    }
    json outside = json::array();
    for (std::size_t c = 0; c < row.size(); ++c) {
        const auto* r = range_of(power_, columns[c]);
        if (is_missing(row[c]) || !r || r->observed == 0) continue;
        if (row[c] < r->min || row[c] > r->max) outside.push_back(field_name(columns[c]));
    }

    json provenance = json::object();
    for (int t = 0; t < 3; ++t) {
        const ModelBundle& b = t == 0 ? power_ : t == 1 ? throughput_ : perf_;
        provenance[std::string(to_string(b.target))] = {{"learner", to_string(b.learner)},
                                                        {"checksum", checksums_[t]},
                                                        {"created", b.provenance.created},
                                                        {"data_fingerprint", b.provenance.data_fingerprint},
                                                        {"seed", b.provenance.seed}};
    }
    return {{"power", curve_json(curve.load, curve.power, "watts")},
            {"max_throughput", number(curve.max_throughput)},
            {"perf_to_power", curve_json(curve.load, curve.perf, "ssj_ops_per_watt")},
            {"eq1_composed", curve_json(curve.load, curve.composed, "ssj_ops_per_watt")},
            {"flags", {{"imputed", std::move(imputed)}, {"out_of_range", std::move(outside)}, {"sanity", curve.flags}}},
            {"provenance", std::move(provenance)}};
}

ServiceResponse PredictionService::predict(std::string_view body) const {
    json request;
    try {
        request = json::parse(body);
    } catch (const json::parse_error& e) {
        return error_response(400, std::string("malformed JSON: ") + e.what());
    }
    try {
        return {200, predict_json(request)};
    } catch (const ArgumentError& e) {
        std::string field;
        const std::string msg = e.what();
        const auto a = msg.find('\'');
        const auto b = a == std::string::npos ? a : msg.find('\'', a + 1);
        if (b != std::string::npos) field = msg.substr(a + 1, b - a - 1);
        return error_response(422, msg, field);
    }
}

}  // namespace serverlens
