#include <zlib.h>

#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "serverlens/pipeline.hpp"

namespace serverlens {

namespace {

using nlohmann::json;

constexpr std::string_view kMagic = "serverlens-bundle";

// JSON has no NaN; missing cells travel as null.
json number(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

double number_from(const json& j) {
    return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

json vector_json(const std::vector<double>& v) {
    json a = json::array();
    for (double x : v) a.push_back(number(x));
    return a;
}

std::vector<double> vector_from(const json& j) {
    std::vector<double> v;
    v.reserve(j.size());
    for (const auto& x : j) v.push_back(number_from(x));
    return v;
}

json matrix_json(const Matrix& m) {
    json data = json::array();
    for (double x : m.data()) data.push_back(number(x));
    return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
}

Matrix matrix_from(const json& j) {
    Matrix m(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>());
    const auto& data = j.at("data");
    if (data.size() != m.rows() * m.cols()) throw ParseError("matrix payload has the wrong number of cells");
    for (std::size_t i = 0; i < data.size(); ++i) m.data()[i] = number_from(data[i]);
    return m;
}

}  // namespace

json metrics_to_json(const MetricsReport& m) {
    return {{"n", m.n},       {"rmse", number(m.rmse)},           {"r2", number(m.r2)},
            {"mape", number(m.mape)}, {"mape_excluded", m.mape_excluded}, {"maape", number(m.maape)}};
}

namespace {

MetricsReport metrics_from(const json& j) {
    MetricsReport m;
    m.n = j.at("n").get<std::size_t>();
    m.rmse = number_from(j.at("rmse"));
    m.r2 = number_from(j.at("r2"));
    m.mape = number_from(j.at("mape"));
    m.mape_excluded = j.at("mape_excluded").get<std::size_t>();
    m.maape = number_from(j.at("maape"));
    return m;
}

json leaderboard_json(const Leaderboard& board) {
    json entries = json::array();
    for (const auto& e : board.entries) {
        json je = {{"learner", to_string(e.learner)},
                   {"failed", e.failed},
                   {"error", e.error},
                   {"hyperparams", to_json(e.hyperparams)},
                   {"trials", e.trials},
                   {"failed_trials", e.failed_trials},
                   {"seconds", e.seconds}};
        if (!e.failed) {
            je["train"] = metrics_to_json(e.train);
            je["validation"] = metrics_to_json(e.validation);
            je["test"] = e.test ? metrics_to_json(*e.test) : json(nullptr);
        }
        entries.push_back(std::move(je));
    }
    return {{"target", to_string(board.target)}, {"entries", std::move(entries)}};
}

Leaderboard leaderboard_from(const json& j) {
    Leaderboard board;
    board.target = parse_target(j.at("target").get<std::string>());
    for (const auto& je : j.at("entries")) {
        LeaderboardEntry e;
        e.learner = parse_learner(je.at("learner").get<std::string>());
        e.failed = je.at("failed").get<bool>();
        e.error = je.at("error").get<std::string>();
        e.hyperparams = hyperparams_from_json(je.at("hyperparams"));
        e.trials = je.at("trials").get<std::size_t>();
        e.failed_trials = je.at("failed_trials").get<std::size_t>();
        e.seconds = je.at("seconds").get<double>();
        if (!e.failed) {
            e.train = metrics_from(je.at("train"));
            e.validation = metrics_from(je.at("validation"));
            if (!je.at("test").is_null()) e.test = metrics_from(je.at("test"));
        }
        board.entries.push_back(std::move(e));
    }
    return board;
}

}  // namespace

json importance_to_json(const ImportanceReport& r) {
    json features = json::array();
    for (const auto& f : r.features) {
        features.push_back({{"feature", f.feature},
                            {"column", f.column},
                            {"mean", number(f.mean)},
                            {"sd", number(f.sd)},
                            {"samples", vector_json(f.samples)}});
    }
    return {{"baseline_r2", number(r.baseline_r2)},
            {"repeats", r.repeats},
            {"partition", r.partition},
            {"features", std::move(features)}};
}

namespace {

ImportanceReport importance_from(const json& j) {
    ImportanceReport r;
    r.baseline_r2 = number_from(j.at("baseline_r2"));
    r.repeats = j.at("repeats").get<std::size_t>();
    r.partition = j.at("partition").get<std::string>();
    for (const auto& jf : j.at("features")) {
        FeatureImportance f;
        f.feature = jf.at("feature").get<std::string>();
        f.column = jf.at("column").get<std::size_t>();
        f.mean = number_from(jf.at("mean"));
        f.sd = number_from(jf.at("sd"));
        f.samples = vector_from(jf.at("samples"));
        r.features.push_back(std::move(f));
    }
    return r;
}

std::string crc_hex(std::string_view bytes) {
    uLong crc = crc32(0L, Z_NULL, 0);
    // zlib takes uInt lengths; feed large payloads in pieces
    std::size_t offset = 0;
    while (offset < bytes.size()) {
        const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - offset, 1u << 30));
        crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data() + offset), chunk);
        offset += chunk;
    }
    char buf[16];
    std::snprintf(buf, sizeof buf, "%08lx", static_cast<unsigned long>(crc));
    return buf;
}

}  // namespace

json bundle_to_json(const ModelBundle& b) {
    json ranges = json::array();
    for (const auto& r : b.ranges)
        ranges.push_back({{"name", r.name}, {"min", number(r.min)}, {"max", number(r.max)}, {"observed", r.observed}});
    json zero_variance = json::array();
    for (bool z : b.scaler.zero_variance) zero_variance.push_back(z);
    return {{"version", b.version},
            {"target", to_string(b.target)},
            {"schema", b.schema.names},
            {"imputer",
             {{"k", b.imputer.k}, {"reference", matrix_json(b.imputer.reference)}, {"means", vector_json(b.imputer.means)}}},
            {"scaler",
             {{"mean", vector_json(b.scaler.mean)}, {"sd", vector_json(b.scaler.sd)}, {"zero_variance", zero_variance}}},
            {"learner", to_string(b.learner)},
            {"hyperparams", to_json(b.hyperparams)},
            {"model", model_to_json(b.model)},
            {"leaderboard", leaderboard_json(b.leaderboard)},
            {"ranges", std::move(ranges)},
            {"importance", b.importance ? importance_to_json(*b.importance) : json(nullptr)},
            {"provenance",
             {{"data_fingerprint", b.provenance.data_fingerprint},
              {"seed", b.provenance.seed},
              {"created", b.provenance.created},
              {"profile", b.provenance.profile},
              {"train_servers", b.provenance.train_servers},
              {"config", b.provenance.config}}}};
}

ModelBundle bundle_from_json(const json& j) {
    try {
        ModelBundle b;
        b.version = j.at("version").get<int>();
        if (b.version > kBundleVersion) {
            throw VersionError("bundle format version " + std::to_string(b.version) + " is newer than supported version " +
                               std::to_string(kBundleVersion));
        }
        if (b.version < 1) throw VersionError("bundle format version " + std::to_string(b.version) + " is not valid");
        b.target = parse_target(j.at("target").get<std::string>());
        b.schema.names = j.at("schema").get<std::vector<std::string>>();
        if (!(b.schema == FeatureSchema::for_target(b.target))) {
            throw SchemaError("bundle schema does not match the " + std::string(to_string(b.target)) + " target");
        }
        const auto& imp = j.at("imputer");
        b.imputer.k = imp.at("k").get<std::size_t>();
        b.imputer.reference = matrix_from(imp.at("reference"));
        b.imputer.means = vector_from(imp.at("means"));
        const auto& sc = j.at("scaler");
        b.scaler.mean = vector_from(sc.at("mean"));
        b.scaler.sd = vector_from(sc.at("sd"));
        b.scaler.zero_variance = sc.at("zero_variance").get<std::vector<bool>>();
        const std::size_t d = b.schema.size();
        if (b.imputer.reference.cols() != d || b.imputer.means.size() != d || b.scaler.mean.size() != d ||
            b.scaler.sd.size() != d || b.scaler.zero_variance.size() != d) {
            throw SchemaError("bundle preprocessing does not match its schema width");
        }
        b.learner = parse_learner(j.at("learner").get<std::string>());
        b.hyperparams = hyperparams_from_json(j.at("hyperparams"));
        b.model = model_from_json(j.at("model"));
        if (input_dim(b.model) != d) throw SchemaError("bundle model width does not match its schema");
        b.leaderboard = leaderboard_from(j.at("leaderboard"));
        for (const auto& r : j.at("ranges")) {
            b.ranges.push_back({r.at("name").get<std::string>(), number_from(r.at("min")), number_from(r.at("max")),
                                r.at("observed").get<std::size_t>()});
        }
        if (!j.at("importance").is_null()) b.importance = importance_from(j.at("importance"));
        const auto& p = j.at("provenance");
        b.provenance.data_fingerprint = p.at("data_fingerprint").get<std::string>();
        b.provenance.seed = p.at("seed").get<std::uint64_t>();
        b.provenance.created = p.at("created").get<std::string>();
        b.provenance.profile = p.at("profile").get<std::string>();
        b.provenance.train_servers = p.at("train_servers").get<std::size_t>();
        b.provenance.config = p.at("config");
        return b;
    } catch (const json::exception& e) {
        throw ParseError(std::string("bundle: ") + e.what());
    } catch (const ConfigError& e) {
        throw ParseError(std::string("bundle: ") + e.what());
    } catch (const ArgumentError& e) {
        throw ParseError(std::string("bundle: ") + e.what());
    }
}

std::string serialize_bundle(const ModelBundle& bundle) {
    const std::string payload = bundle_to_json(bundle).dump(1);
    std::ostringstream out;
    out << kMagic << ' ' << bundle.version << ' ' << crc_hex(payload) << ' ' << payload.size() << '\n' << payload;
    return out.str();
}

ModelBundle deserialize_bundle(const std::string& text) {
    const auto eol = text.find('\n');
    if (eol == std::string::npos) throw IntegrityError("bundle: missing header line");
    std::istringstream header(text.substr(0, eol));
    std::string magic, crc;
    long long version = 0;
    std::size_t length = 0;
    if (!(header >> magic >> version >> crc >> length) || magic != kMagic) {
        throw IntegrityError("bundle: unrecognised header");
    }
    if (version > kBundleVersion) {
        throw VersionError("bundle format version " + std::to_string(version) + " is newer than supported version " +
                           std::to_string(kBundleVersion) + "; upgrade serverlens to read it");
    }
    const std::string_view payload = std::string_view(text).substr(eol + 1);
    if (payload.size() != length) {
        throw IntegrityError("bundle: payload is " + std::to_string(payload.size()) + " bytes, header says " +
                             std::to_string(length) + " (truncated or padded file)");
    }
    if (crc_hex(payload) != crc) throw IntegrityError("bundle: checksum mismatch");
    json j;
    try {
        j = json::parse(payload);
    } catch (const json::exception& e) {
        throw IntegrityError(std::string("bundle: payload is not valid JSON: ") + e.what());
    }
    auto b = bundle_from_json(j);
    if (b.version != version) throw IntegrityError("bundle: header and payload versions differ");
    return b;
}

void save_bundle(const ModelBundle& bundle, const std::string& path) {
    const std::string text = serialize_bundle(bundle);
    // write beside the target, then rename, so readers never see half a file
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw ArgumentError("cannot write bundle to '" + path + "'");
        out.write(text.data(), static_cast<std::streamsize>(text.size()));
        if (!out) throw ArgumentError("failed writing bundle to '" + path + "'");
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0) {
        std::remove(tmp.c_str());
        throw ArgumentError("cannot move bundle into place at '" + path + "'");
    }
}

ModelBundle load_bundle(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ArgumentError("cannot read bundle '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return deserialize_bundle(ss.str());
}

std::string bundle_checksum(const ModelBundle& bundle) { return crc_hex(bundle_to_json(bundle).dump(1)); }

std::string fingerprint(const DesignMatrix& matrix) {
    std::string bytes;
    bytes.append(to_string(matrix.target));
    auto put = [&](const void* p, std::size_t n) { bytes.append(static_cast<const char*>(p), n); };
    const auto cells = matrix.rows.data();
    put(cells.data(), cells.size() * sizeof(double));
    put(matrix.y.data(), matrix.y.size() * sizeof(double));
    for (const auto& id : matrix.group_ids) bytes.append(id).push_back('\0');
    std::ostringstream out;
    out << crc_hex(bytes) << '-' << matrix.size();
    return out.str();
}

}  // namespace serverlens
