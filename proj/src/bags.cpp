#include "wearmil/bags.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

namespace wearmil::bags {

using nlohmann::json;

std::string Bag::id() const {
    return horizon ? patient_id + "_" + std::string(horizon_name(*horizon)) : patient_id;
}

HorizonSetting setting_for(Horizon h) {
    return h == Horizon::M3 ? HorizonSetting::M3toM3 : HorizonSetting::AllToM6;
}

Timestamp eligibility_cutoff(Date assessment_date) {
    return at_midnight(assessment_date + std::chrono::days{1});
}

BuildResult build_bags(const std::map<std::string, std::vector<encoder::Embedding>>& per_patient,
                       const std::vector<Assessment>& assessments, HorizonSetting setting) {
    std::map<std::string, std::map<Horizon, const Assessment*>> by_patient;
    for (const auto& a : assessments) {
        auto& slot = by_patient[a.patient_id][a.horizon];
        if (slot) throw DataError("duplicate " + std::string(horizon_name(a.horizon)) +
                                  " assessment for " + a.patient_id);
        slot = &a;
    }
    for (const auto& [pid, hs] : by_patient) {
        auto m3 = hs.find(Horizon::M3), m6 = hs.find(Horizon::M6);
        if (m3 != hs.end() && m6 != hs.end() && !(m3->second->date < m6->second->date))
            throw DataError("patient " + pid + ": M6 assessment is not after M3");
    }

    const Horizon label = setting == HorizonSetting::M3toM3 ? Horizon::M3 : Horizon::M6;
    BuildResult out;
    for (const auto& [pid, embeddings] : per_patient) {
        const auto hs = by_patient.find(pid);
        const Assessment* a = nullptr;
        if (hs != by_patient.end()) {
            auto it = hs->second.find(label);
            if (it != hs->second.end()) a = it->second;
        }
        if (!a) {
            out.skipped.push_back(pid + ": no " + std::string(horizon_name(label)) + " PSS");
            continue;
        }
        const Timestamp cutoff = eligibility_cutoff(a->date);
        Bag bag;
        bag.patient_id = pid;
        bag.horizon = label;
        bag.target = static_cast<double>(a->pss);
        for (const auto& e : embeddings) {
            if (e.span_end > cutoff || e.instant > cutoff) continue;
            if (e.values.size() != bag.dim)
                throw DataError("embedding of " + pid + " has dimension " + std::to_string(e.values.size()));
            bag.embeddings.insert(bag.embeddings.end(), e.values.begin(), e.values.end());
            bag.modality_ids.push_back(static_cast<std::uint8_t>(e.modality));
            bag.instants.push_back(e.instant);
            bag.span_ends.push_back(e.span_end);
            bag.views.push_back(e.view);
        }
        if (bag.size() == 0) {
            out.skipped.push_back(pid + ": no eligible instances");
            continue;
        }
        out.bags.push_back(std::move(bag));
    }
    return out;
}

CapPolicy parse_cap_policy(std::string_view s) {
    if (s == "uniform") return CapPolicy::Uniform;
    if (s == "latest") return CapPolicy::Latest;
    throw ConfigError("cap-policy must be 'uniform' or 'latest', got '" + std::string(s) + "'");
}

std::string_view cap_policy_name(CapPolicy p) { return p == CapPolicy::Uniform ? "uniform" : "latest"; }

namespace {

Bag select_rows(const Bag& b, const std::vector<std::size_t>& rows) {
    Bag out = b;
    out.embeddings.clear();
    out.modality_ids.clear();
    out.instants.clear();
    out.span_ends.clear();
    out.views.clear();
    for (std::size_t i : rows) {
        auto r = b.row(i);
        out.embeddings.insert(out.embeddings.end(), r.begin(), r.end());
        out.modality_ids.push_back(b.modality_ids[i]);
        out.instants.push_back(b.instants[i]);
        out.span_ends.push_back(b.span_ends[i]);
        out.views.push_back(b.views[i]);
    }
    return out;
}

}  // namespace

Bag cap_instances(const Bag& b, std::size_t max_n, std::uint64_t seed, CapPolicy policy) {
    if (max_n == 0) throw ArgumentError("instance cap must be at least 1");
    if (b.size() <= max_n) return b;
    std::vector<std::size_t> idx(b.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (policy == CapPolicy::Uniform) {
        Rng rng(derive_seed(seed, "cap", b.id()));
        for (std::size_t i = 0; i < max_n; ++i) std::swap(idx[i], idx[i + rng.below(idx.size() - i)]);
        idx.resize(max_n);
    } else {
        std::stable_sort(idx.begin(), idx.end(),
                         [&](std::size_t x, std::size_t y) { return b.instants[x] > b.instants[y]; });
        idx.resize(max_n);
    }
    std::sort(idx.begin(), idx.end());
    return select_rows(b, idx);
}

ModalitySet ModalitySet::parse(std::string_view s) {
    if (s == "all") return all();
    ModalitySet m{0};
    for (char c : s) {
        switch (c) {
            case 'p': case 'P': m.bits |= 1u << static_cast<int>(Modality::Activity); break;
            case 's': case 'S': m.bits |= 1u << static_cast<int>(Modality::Sleep); break;
            case 'e': case 'E': m.bits |= 1u << static_cast<int>(Modality::Ecg); break;
            default: throw ArgumentError("unknown modality set '" + std::string(s) + "'");
        }
    }
    if (m.bits == 0) throw ArgumentError("empty modality set");
    return m;
}

std::string ModalitySet::name() const {
    if (bits == 0b111) return "all";
    std::string s;
    if (contains(Modality::Activity)) s += 'p';
    if (contains(Modality::Sleep)) s += 's';
    if (contains(Modality::Ecg)) s += 'e';
    return s;
}

Bag filter_modalities(const Bag& b, ModalitySet keep) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < b.size(); ++i)
        if (keep.contains(static_cast<Modality>(b.modality_ids[i]))) rows.push_back(i);
    return rows.size() == b.size() ? b : select_rows(b, rows);
}

std::array<std::size_t, kModalityCount> tabulate_modalities(std::span<const Bag> bags) {
    std::array<std::size_t, kModalityCount> counts{};
    for (const auto& b : bags)
        for (auto m : b.modality_ids) ++counts.at(m);
    return counts;
}

// ---------------------------------------------------------------------------
// WMB1

namespace {

constexpr char kMagic[4] = {'W', 'M', 'B', '1'};
constexpr std::size_t kPrefix = 12;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
std::uint64_t get_le(std::span<const std::uint8_t> b, std::size_t off, int width) {
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(b[off + i]) << (8 * i);
    return v;
}

ViewKind default_view(Modality m) {
    switch (m) {
        case Modality::Activity: return ViewKind::ActivityHeatmap;
        case Modality::Sleep: return ViewKind::SleepHeatmap;
        default: return ViewKind::Recurrence;
    }
}

}  // namespace

std::vector<std::uint8_t> encode_bag(const Bag& b) {
    const std::size_t n = b.size();
    if (b.embeddings.size() != n * b.dim || b.instants.size() != n || b.span_ends.size() != n ||
        b.views.size() != n)
        throw ArgumentError("bag " + b.id() + " has misaligned columns");
    json header;
    header["patient_id"] = b.patient_id;
    header["horizon"] = b.horizon ? json(std::string(horizon_name(*b.horizon))) : json(nullptr);
    header["n"] = n;
    header["dim"] = b.dim;
    header["target"] = b.target ? json(*b.target) : json(nullptr);
    json inst = json::array(), ends = json::array(), views = json::array();
    for (std::size_t i = 0; i < n; ++i) {
        inst.push_back(format_timestamp(b.instants[i]));
        ends.push_back(format_timestamp(b.span_ends[i]));
        views.push_back(std::string(view_name(b.views[i])));
    }
    header["instants"] = std::move(inst);
    header["span_ends"] = std::move(ends);
    header["views"] = std::move(views);
    const std::string text = header.dump();

    std::vector<std::uint8_t> body;
    body.reserve(4 + text.size() + n * b.dim * 4 + n);
    put_u32(body, static_cast<std::uint32_t>(text.size()));
    body.insert(body.end(), text.begin(), text.end());
    for (float f : b.embeddings) {
        std::uint32_t bits;
        std::memcpy(&bits, &f, 4);
        put_u32(body, bits);
    }
    body.insert(body.end(), b.modality_ids.begin(), b.modality_ids.end());

    uLongf packed_len = compressBound(static_cast<uLong>(body.size()));
    std::vector<std::uint8_t> out(kPrefix + packed_len);
    std::memcpy(out.data(), kMagic, 4);
    std::vector<std::uint8_t> len_bytes;
    put_u64(len_bytes, body.size());
    std::copy(len_bytes.begin(), len_bytes.end(), out.begin() + 4);
    if (compress2(out.data() + kPrefix, &packed_len, body.data(), static_cast<uLong>(body.size()),
                  Z_BEST_COMPRESSION) != Z_OK)
        throw DataError("deflate failed for bag " + b.id());
    out.resize(kPrefix + packed_len);
    return out;
}

Bag decode_bag(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0)
        throw FormatError("bad magic: not a WMB1 container", 0);
    if (bytes.size() < kPrefix) throw FormatError("truncated container prefix", bytes.size());
    const std::uint64_t body_len = get_le(bytes, 4, 8);
    if (body_len > (std::uint64_t{1} << 34)) throw FormatError("implausible body length", 4);

    std::vector<std::uint8_t> body(static_cast<std::size_t>(body_len));
    uLongf out_len = static_cast<uLongf>(body_len);
    uLong in_len = static_cast<uLong>(bytes.size() - kPrefix);
    const int rc = uncompress2(body.data(), &out_len, bytes.data() + kPrefix, &in_len);
    if (rc != Z_OK || out_len != body_len)
        throw FormatError("corrupt or truncated deflate stream", kPrefix + in_len);
    if (kPrefix + in_len != bytes.size())
        throw FormatError("trailing bytes after deflate stream", kPrefix + in_len);

    // Offsets below are relative to the decompressed body.
    if (body.size() < 4) throw FormatError("truncated body: missing header length", body.size());
    const std::size_t hlen = static_cast<std::size_t>(get_le(body, 0, 4));
    if (4 + hlen > body.size()) throw FormatError("truncated body: JSON header cut short", body.size());
    json header;
    try {
        header = json::parse(body.begin() + 4, body.begin() + 4 + static_cast<std::ptrdiff_t>(hlen));
    } catch (const json::exception& e) {
        throw FormatError(std::string("malformed JSON header: ") + e.what(), 4);
    }

    Bag b;
    std::size_t n = 0;
    try {
        b.patient_id = header.at("patient_id").get<std::string>();
        if (!header.at("horizon").is_null()) b.horizon = parse_horizon(header["horizon"].get<std::string>());
        n = header.at("n").get<std::size_t>();
        b.dim = header.at("dim").get<std::size_t>();
        if (!header.at("target").is_null()) b.target = header["target"].get<double>();
        const auto& inst = header.at("instants");
        if (inst.size() != n) throw FormatError("instants list length differs from n", 4);
        for (const auto& t : inst) b.instants.push_back(parse_timestamp(t.get<std::string>()));
        if (header.contains("span_ends")) {
            if (header["span_ends"].size() != n) throw FormatError("span_ends length differs from n", 4);
            for (const auto& t : header["span_ends"]) b.span_ends.push_back(parse_timestamp(t.get<std::string>()));
        } else {
            b.span_ends = b.instants;
        }
        if (header.contains("views")) {
            if (header["views"].size() != n) throw FormatError("views length differs from n", 4);
            for (const auto& v : header["views"]) b.views.push_back(parse_view(v.get<std::string>()));
        }
    } catch (const json::exception& e) {
        throw FormatError(std::string("JSON header missing fields: ") + e.what(), 4);
    } catch (const DataError& e) {
        throw FormatError(std::string("JSON header has invalid values: ") + e.what(), 4);
    }
    if (b.dim != encoder::kEmbeddingDim)
        throw FormatError("dimension mismatch: header dim " + std::to_string(b.dim) + ", expected " +
                              std::to_string(encoder::kEmbeddingDim),
                          4);

    std::size_t off = 4 + hlen;
    const std::size_t emb_bytes = n * b.dim * 4;
    if (body.size() - off < emb_bytes)
        throw FormatError("truncated embeddings: header n=" + std::to_string(n) + " but only " +
                              std::to_string((body.size() - off) / (b.dim * 4)) + " rows present",
                          body.size());
    b.embeddings.resize(n * b.dim);
    for (std::size_t i = 0; i < b.embeddings.size(); ++i) {
        const auto bits = static_cast<std::uint32_t>(get_le(body, off + 4 * i, 4));
        std::memcpy(&b.embeddings[i], &bits, 4);
    }
    off += emb_bytes;
    if (body.size() - off < n)
        throw FormatError("truncated modality ids", body.size());
    b.modality_ids.assign(body.begin() + static_cast<std::ptrdiff_t>(off),
                          body.begin() + static_cast<std::ptrdiff_t>(off + n));
    for (std::size_t i = 0; i < n; ++i)
        if (b.modality_ids[i] >= kModalityCount) throw FormatError("modality id out of range", off + i);
    off += n;
    if (off != body.size()) throw FormatError("trailing bytes in body", off);
    if (b.views.empty() && n > 0)
        for (auto m : b.modality_ids) b.views.push_back(default_view(static_cast<Modality>(m)));
    return b;
}

void write_bag(const Bag& b, const std::filesystem::path& path) {
    const auto bytes = encode_bag(b);
    std::ofstream out(path, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("cannot write '" + path.string() + "'");
}

Bag read_bag(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open '" + path.string() + "'");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_bag(bytes);
}

std::vector<Assessment> read_assessments_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open '" + path.string() + "'");
    std::string line;
    std::getline(in, line);
    if (line != "patient_id,horizon,date,pss")
        throw DataError("assessments CSV header must be patient_id,horizon,date,pss");
    std::vector<Assessment> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> c;
        std::string cell;
        std::istringstream ss(line);
        while (std::getline(ss, cell, ',')) c.push_back(cell);
        if (c.size() != 4) throw DataError("malformed assessment row '" + line + "'");
        Assessment a;
        a.patient_id = c[0];
        try {
            a.horizon = parse_horizon(c[1]);
        } catch (const ArgumentError& e) {
            throw DataError(e.what());
        }
        a.date = parse_date(c[2]);
        try {
            a.pss = std::stoi(c[3]);
        } catch (const std::logic_error&) {
            throw DataError("malformed PSS value '" + c[3] + "'");
        }
        if (a.pss < 0 || a.pss > 40) throw DataError("PSS out of [0,40]: " + c[3]);
        out.push_back(a);
    }
    return out;
}

void write_assessments_csv(const std::filesystem::path& path, const std::vector<Assessment>& as) {
    std::ofstream out(path);
    out << "patient_id,horizon,date,pss\n";
    for (const auto& a : as)
        out << a.patient_id << ',' << horizon_name(a.horizon) << ',' << format_date(a.date) << ','
            << a.pss << '\n';
    if (!out) throw DataError("cannot write '" + path.string() + "'");
}

}  // namespace wearmil::bags
