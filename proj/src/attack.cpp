#include "kernleak/attack.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <unordered_map>

#include "json.hpp"
#include "kernleak/schedule.hpp"

namespace kernleak {

using nlohmann::json;

namespace {
constexpr double kStdFloor = 1e-6;
}

SignatureVec view_features(const ViewRecord& r) {
    return {std::log(static_cast<double>(std::max<int64_t>(1, r.duration_ns))),
            std::log1p(static_cast<double>(r.l2_read_bytes)),
            std::log1p(static_cast<double>(r.l2_write_bytes)),
            std::log1p(static_cast<double>(r.input_bytes)),
            std::log1p(static_cast<double>(r.output_bytes))};
}

double class_distance(const SignatureVec& x, const ClassSignature& c) {
    double sum = 0;
    for (int i = 0; i < kSignatureDims; ++i) {
        double z = (x[i] - c.mean[i]) / c.stddev[i];
        sum += z * z;
    }
    return std::sqrt(sum);
}

SignatureDB build_signature_db(const std::vector<ModelGraph>& corpus,
                               const DeviceProfile& d, double noise_sigma,
                               const std::vector<uint64_t>& seeds) {
    if (corpus.empty()) throw ValidationError("signature corpus is empty");
    if (seeds.empty()) throw ValidationError("signature corpus needs >= 1 seed");

    SignatureDB db;
    db.device_name = d.name;
    db.noise_sigma = noise_sigma;

    std::map<OpKind, std::vector<SignatureVec>> samples;
    std::array<std::array<int64_t, kOpKindCount>, kOpKindCount> counts{};

    for (const auto& graph : corpus) {
        auto compiled = lower(graph, default_schedules(graph));
        std::unordered_map<std::string, OpKind> kind_of;
        for (const auto& n : graph.nodes) kind_of[n.id] = n.op;

        for (uint64_t seed : seeds) {
            Trace t = run_inference(compiled, d, noise_sigma, seed);
            auto view = attacker_view(t);
            for (size_t i = 0; i < compiled.kernels.size(); ++i) {
                // Default schedules never fuse or split, so every kernel
                // carries exactly one op.
                OpKind kind = kind_of.at(compiled.kernels[i].op_ids.at(0));
                samples[kind].push_back(view_features(view.records[i]));
            }
        }
        auto seq = op_sequence(graph);
        for (size_t i = 0; i + 1 < seq.size(); ++i)
            ++counts[static_cast<int>(seq[i])][static_cast<int>(seq[i + 1])];
    }

    for (const auto& [kind, vecs] : samples) {
        ClassSignature sig;
        sig.samples = static_cast<int64_t>(vecs.size());
        if (sig.samples < 2)
            std::fprintf(stderr, "warning: op '%s' has %lld sample(s); variance floored\n",
                         to_string(kind), static_cast<long long>(sig.samples));
        for (int dim = 0; dim < kSignatureDims; ++dim) {
            double mean = 0;
            for (const auto& v : vecs) mean += v[dim];
            mean /= static_cast<double>(vecs.size());
            double var = 0;
            for (const auto& v : vecs) var += (v[dim] - mean) * (v[dim] - mean);
            var /= static_cast<double>(vecs.size());
            sig.mean[dim] = mean;
            sig.stddev[dim] = std::max(std::sqrt(var), kStdFloor);
        }
        db.classes[kind] = sig;
    }

    // Add-one smoothed transition prior over the full vocabulary.
    for (int i = 0; i < kOpKindCount; ++i) {
        int64_t row = 0;
        for (int j = 0; j < kOpKindCount; ++j) row += counts[i][j];
        for (int j = 0; j < kOpKindCount; ++j)
            db.transition[i][j] = static_cast<double>(counts[i][j] + 1) /
                                  static_cast<double>(row + kOpKindCount);
    }

    // tau: 99th percentile (nearest rank) of within-class distances.
    std::vector<double> within;
    for (const auto& [kind, vecs] : samples)
        for (const auto& v : vecs)
            within.push_back(class_distance(v, db.classes.at(kind)));
    std::sort(within.begin(), within.end());
    size_t rank = static_cast<size_t>(
        std::ceil(0.99 * static_cast<double>(within.size())));
    db.unknown_threshold = within[std::min(within.size() - 1, rank == 0 ? 0 : rank - 1)];
    return db;
}

AttackPrediction predict_architecture(const AttackerView& view, const SignatureDB& db) {
    if (db.classes.empty()) throw ValidationError("signature database is empty");

    AttackPrediction pred;
    const size_t n = view.records.size();
    if (n == 0) return pred;

    std::vector<OpKind> kinds;  // enum order (std::map key order)
    for (const auto& [kind, _] : db.classes) kinds.push_back(kind);
    const size_t c = kinds.size();

    // Emission scores: negative z-normalized distance per class.
    std::vector<std::vector<double>> distance(n, std::vector<double>(c));
    std::vector<double> best_raw(n);
    for (size_t t = 0; t < n; ++t) {
        SignatureVec x = view_features(view.records[t]);
        double best = std::numeric_limits<double>::infinity();
        for (size_t j = 0; j < c; ++j) {
            distance[t][j] = class_distance(x, db.classes.at(kinds[j]));
            best = std::min(best, distance[t][j]);
        }
        best_raw[t] = best;
    }

    // Log-domain Viterbi; ties resolve to the lowest enum value because
    // candidates are scanned in enum order under strict improvement.
    std::vector<std::vector<double>> dp(n, std::vector<double>(c));
    std::vector<std::vector<size_t>> back(n, std::vector<size_t>(c, 0));
    for (size_t j = 0; j < c; ++j) dp[0][j] = -distance[0][j];
    for (size_t t = 1; t < n; ++t) {
        for (size_t j = 0; j < c; ++j) {
            double best = -std::numeric_limits<double>::infinity();
            size_t arg = 0;
            for (size_t p = 0; p < c; ++p) {
                double trans = db.transition[static_cast<int>(kinds[p])]
                                            [static_cast<int>(kinds[j])];
                double s = dp[t - 1][p] + db.transition_weight * std::log(trans);
                if (s > best) {
                    best = s;
                    arg = p;
                }
            }
            dp[t][j] = best - distance[t][j];
            back[t][j] = arg;
        }
    }

    size_t tail = 0;
    for (size_t j = 1; j < c; ++j)
        if (dp[n - 1][j] > dp[n - 1][tail]) tail = j;
    std::vector<size_t> path(n);
    path[n - 1] = tail;
    for (size_t t = n - 1; t > 0; --t) path[t - 1] = back[t][path[t]];

    pred.sequence.resize(n);
    pred.confidence.resize(n);
    for (size_t t = 0; t < n; ++t) {
        if (best_raw[t] > db.unknown_threshold) {
            pred.sequence[t] = std::nullopt;
            pred.confidence[t] = -best_raw[t];
        } else {
            pred.sequence[t] = kinds[path[t]];
            pred.confidence[t] = -distance[t][path[t]];
        }
    }
    return pred;
}

FidelityScore fidelity_sequences(const std::vector<std::optional<OpKind>>& pred,
                                 const std::vector<OpKind>& actual) {
    const size_t m = pred.size(), n = actual.size();
    // dp[i][j]: edit distance between pred[0..i) and actual[0..j).
    std::vector<std::vector<int64_t>> dp(m + 1, std::vector<int64_t>(n + 1));
    for (size_t i = 0; i <= m; ++i) dp[i][0] = static_cast<int64_t>(i);
    for (size_t j = 0; j <= n; ++j) dp[0][j] = static_cast<int64_t>(j);
    for (size_t i = 1; i <= m; ++i)
        for (size_t j = 1; j <= n; ++j) {
            int64_t match = (pred[i - 1] && *pred[i - 1] == actual[j - 1]) ? 0 : 1;
            dp[i][j] = std::min({dp[i - 1][j - 1] + match,  // substitute / keep
                                 dp[i - 1][j] + 1,          // delete from pred
                                 dp[i][j - 1] + 1});        // insert into pred
        }

    FidelityScore score;
    // Deterministic backtrack: diagonal first, then deletion, then insertion.
    size_t i = m, j = n;
    while (i > 0 || j > 0) {
        if (i > 0 && j > 0) {
            int64_t match = (pred[i - 1] && *pred[i - 1] == actual[j - 1]) ? 0 : 1;
            if (dp[i][j] == dp[i - 1][j - 1] + match) {
                score.substitutions += match;
                --i;
                --j;
                continue;
            }
        }
        if (i > 0 && dp[i][j] == dp[i - 1][j] + 1) {
            ++score.deletions;
            --i;
            continue;
        }
        ++score.insertions;
        --j;
    }

    int64_t edits = dp[m][n];
    size_t longest = std::max(m, n);
    score.value = longest == 0
                      ? 1.0
                      : 1.0 - static_cast<double>(edits) / static_cast<double>(longest);
    return score;
}

FidelityScore fidelity(const AttackPrediction& pred, const ModelGraph& actual) {
    auto seq = op_sequence(actual);
    if (seq.empty()) throw ValidationError("actual graph has no nodes");
    return fidelity_sequences(pred.sequence, seq);
}

double unknown_fraction(const AttackPrediction& pred) {
    if (pred.sequence.empty()) return 0;
    size_t unknown = 0;
    for (const auto& s : pred.sequence)
        if (!s) ++unknown;
    return static_cast<double>(unknown) / static_cast<double>(pred.sequence.size());
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

std::string save_signature_db(const SignatureDB& db) {
    json doc;
    doc["device"] = db.device_name;
    doc["noise_sigma"] = db.noise_sigma;
    doc["unknown_threshold"] = db.unknown_threshold;
    doc["transition_weight"] = db.transition_weight;
    json classes = json::object();
    for (const auto& [kind, sig] : db.classes) {
        json jc;
        jc["mean"] = sig.mean;
        jc["stddev"] = sig.stddev;
        jc["samples"] = sig.samples;
        classes[to_string(kind)] = std::move(jc);
    }
    doc["classes"] = std::move(classes);
    json rows = json::array();
    for (const auto& row : db.transition) rows.push_back(row);
    doc["transition"] = std::move(rows);
    return doc.dump(2) + "\n";
}

SignatureDB load_signature_db(std::string_view bytes) {
    json doc;
    try {
        doc = json::parse(bytes);
    } catch (const json::exception& e) {
        throw ParseError(std::string("bad signature db: ") + e.what());
    }
    SignatureDB db;
    try {
        db.device_name = doc.at("device").get<std::string>();
        db.noise_sigma = doc.at("noise_sigma").get<double>();
        db.unknown_threshold = doc.at("unknown_threshold").get<double>();
        db.transition_weight = doc.at("transition_weight").get<double>();
        for (const auto& [name, jc] : doc.at("classes").items()) {
            auto kind = op_kind_from_string(name);
            if (!kind) throw ValidationError("unknown op kind '" + name + "' in db");
            ClassSignature sig;
            sig.mean = jc.at("mean").get<SignatureVec>();
            sig.stddev = jc.at("stddev").get<SignatureVec>();
            sig.samples = jc.at("samples").get<int64_t>();
            db.classes[*kind] = sig;
        }
        const auto& rows = doc.at("transition");
        if (rows.size() != kOpKindCount)
            throw ValidationError("transition matrix must have 12 rows");
        for (int i = 0; i < kOpKindCount; ++i)
            db.transition[i] = rows[i].get<std::array<double, kOpKindCount>>();
    } catch (const json::exception& e) {
        throw ParseError(std::string("bad signature db field: ") + e.what());
    }
    return db;
}

std::string save_prediction(const AttackPrediction& pred,
                            const std::optional<FidelityScore>& score) {
    json doc;
    json seq = json::array();
    for (const auto& s : pred.sequence)
        seq.push_back(s ? to_string(*s) : "UNKNOWN");
    doc["sequence"] = std::move(seq);
    doc["confidence"] = pred.confidence;
    doc["unknown_fraction"] = unknown_fraction(pred);
    if (score) {
        doc["fidelity"] = score->value;
        json edits;
        edits["insertions"] = score->insertions;
        edits["deletions"] = score->deletions;
        edits["substitutions"] = score->substitutions;
        doc["edits"] = std::move(edits);
    }
    return doc.dump(2) + "\n";
}

} // namespace kernleak
