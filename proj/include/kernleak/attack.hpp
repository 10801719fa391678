#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "kernleak/model_ir.hpp"
#include "kernleak/perfsim.hpp"
#include "kernleak/sidechannel.hpp"

// Architecture extraction from kernel metrics: per-operator signatures
// are learned from library-default compilations, an unseen trace is
// decoded into an operator sequence (nearest centroid + Viterbi over a
// transition prior), and predictions are scored by normalized edit
// similarity.

namespace kernleak {

// Log-scaled metric features: log duration, log1p of reads, writes,
// input bytes, output bytes.
inline constexpr int kSignatureDims = 5;
using SignatureVec = std::array<double, kSignatureDims>;

SignatureVec view_features(const ViewRecord& r);

struct ClassSignature {
    SignatureVec mean{};
    SignatureVec stddev{};  // floored at 1e-6
    int64_t samples = 0;
};

struct SignatureDB {
    std::string device_name;
    double noise_sigma = 0;
    double unknown_threshold = 0;   // tau: distances beyond it decode to UNKNOWN
    double transition_weight = 1.5;  // lambda: weight of the transition prior (calibrated)
    std::map<OpKind, ClassSignature> classes;
    // Row-stochastic prior over all op kinds (add-one smoothed), enum order.
    std::array<std::array<double, kOpKindCount>, kOpKindCount> transition{};
};

// z-normalized distance of a feature vector to one class.
double class_distance(const SignatureVec& x, const ClassSignature& c);

// Learn signatures from default-schedule compilations of the corpus
// (one kernel per node, so attribution is exact). Each graph is traced
// once per seed. tau is the 99th percentile of within-class distances.
SignatureDB build_signature_db(const std::vector<ModelGraph>& corpus,
                               const DeviceProfile& d, double noise_sigma,
                               const std::vector<uint64_t>& seeds);

std::string save_signature_db(const SignatureDB& db);
SignatureDB load_signature_db(std::string_view bytes);

struct AttackPrediction {
    // One entry per kernel record; nullopt is UNKNOWN.
    std::vector<std::optional<OpKind>> sequence;
    // Negative normalized distance of the emitted label (best class
    // distance for UNKNOWN positions).
    std::vector<double> confidence;
};

AttackPrediction predict_architecture(const AttackerView& view, const SignatureDB& db);

struct FidelityScore {
    double value = 0;  // 1 - L / max(|pred|, |actual|), in [0, 1]
    int64_t insertions = 0;
    int64_t deletions = 0;
    int64_t substitutions = 0;
};

// Levenshtein with unit costs; UNKNOWN matches nothing.
FidelityScore fidelity_sequences(const std::vector<std::optional<OpKind>>& pred,
                                 const std::vector<OpKind>& actual);

FidelityScore fidelity(const AttackPrediction& pred, const ModelGraph& actual);

// Fraction of UNKNOWN positions (0 for an empty prediction).
double unknown_fraction(const AttackPrediction& pred);

std::string save_prediction(const AttackPrediction& pred,
                            const std::optional<FidelityScore>& score);

} // namespace kernleak
