#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "wearmil/common.hpp"
#include "wearmil/encoder.hpp"
#include "wearmil/raster.hpp"

namespace wearmil::bags {

struct Assessment {
    std::string patient_id;
    Horizon horizon = Horizon::M3;
    Date date{};
    int pss = 0;
};

/// A patient-horizon bag. Row i of `embeddings` (n x dim, float32) aligns
/// with modality_ids[i], instants[i], span_ends[i] and views[i]. Embedding
/// caches reuse the type with no horizon and no target.
struct Bag {
    std::string patient_id;
    std::optional<Horizon> horizon;
    std::size_t dim = encoder::kEmbeddingDim;
    std::vector<float> embeddings;
    std::vector<std::uint8_t> modality_ids;
    std::vector<Timestamp> instants;
    std::vector<Timestamp> span_ends;
    std::vector<ViewKind> views;
    std::optional<double> target;

    std::size_t size() const { return modality_ids.size(); }
    std::span<const float> row(std::size_t i) const { return {embeddings.data() + i * dim, dim}; }
    std::string id() const;  // "<patient>_<M3|M6>" or the patient id
    bool operator==(const Bag&) const = default;
};

enum class HorizonSetting { M3toM3, AllToM6 };
HorizonSetting setting_for(Horizon h);

/// Data up to and including the assessment day is eligible: the cutoff is
/// midnight after the assessment date.
Timestamp eligibility_cutoff(Date assessment_date);

struct BuildResult {
    std::vector<Bag> bags;
    std::vector<std::string> skipped;  // "<patient>: <reason>"
};

/// An instance joins a bag when its whole data span ends at or before the
/// horizon's cutoff; ALL->M6 therefore includes pre-M3 data while no
/// post-M3 instance reaches an M3 bag.
BuildResult build_bags(const std::map<std::string, std::vector<encoder::Embedding>>& per_patient,
                       const std::vector<Assessment>& assessments, HorizonSetting setting);

enum class CapPolicy { Uniform, Latest };
CapPolicy parse_cap_policy(std::string_view s);
std::string_view cap_policy_name(CapPolicy p);

/// Bags of at most max_n rows keep all rows. Larger bags keep a subset
/// of exactly max_n rows in original order: uniform without replacement
/// seeded by (seed, patient, horizon), or the max_n most recent.
Bag cap_instances(const Bag& b, std::size_t max_n, std::uint64_t seed,
                  CapPolicy policy = CapPolicy::Uniform);

// Modality bit set: bit m set when modality id m is kept.
struct ModalitySet {
    std::uint8_t bits = 0b111;
    bool contains(Modality m) const { return (bits >> static_cast<int>(m)) & 1u; }
    static ModalitySet all() { return {0b111}; }
    /// "all" | "ps" | "pe" | "se" (P = physical activity, S = sleep, E = ECG);
    /// any combination of the letters p, s, e is accepted.
    static ModalitySet parse(std::string_view s);
    std::string name() const;
    bool operator==(const ModalitySet&) const = default;
};

Bag filter_modalities(const Bag& b, ModalitySet keep);

// Instance counts per modality (ECG, activity, sleep) over a set of bags.
std::array<std::size_t, kModalityCount> tabulate_modalities(std::span<const Bag> bags);

// --- WMB1 container ----------------------------------------------------------
//
//   bytes 0..3   "WMB1"
//   bytes 4..11  uint64 LE length of the uncompressed body
//   bytes 12..   zlib (deflate) stream of the body
//
// body: uint32 LE header length, JSON header {patient_id, horizon, n, dim,
// target, instants, span_ends, views}, n*dim float32 LE embeddings, n
// modality bytes.

std::vector<std::uint8_t> encode_bag(const Bag& b);
Bag decode_bag(std::span<const std::uint8_t> bytes);
void write_bag(const Bag& b, const std::filesystem::path& path);
Bag read_bag(const std::filesystem::path& path);

/// Assessments CSV: `patient_id,horizon,date,pss`.
std::vector<Assessment> read_assessments_csv(const std::filesystem::path& path);
void write_assessments_csv(const std::filesystem::path& path, const std::vector<Assessment>& a);

}  // namespace wearmil::bags
