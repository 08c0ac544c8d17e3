#include <doctest.h>

#include <zlib.h>

#include <cstring>

#include "helpers.hpp"
#include "wearmil/bags.hpp"

using namespace wearmil;
using namespace wearmil::bags;

namespace {

encoder::Embedding emb(const std::string& pid, Date day, Modality m, float fill = 0.1f) {
    encoder::Embedding e;
    e.values.assign(encoder::kEmbeddingDim, fill);
    e.modality = m;
    e.view = m == Modality::Ecg ? ViewKind::Recurrence : ViewKind::ActivityHeatmap;
    e.patient_id = pid;
    e.instant = at_midnight(day) + std::chrono::hours{10};
    e.span_end = e.instant + std::chrono::minutes{5};
    return e;
}

std::vector<Assessment> assess(const std::string& pid, Date m3, Date m6, int pss3 = 12, int pss6 = 18) {
    return {{pid, Horizon::M3, m3, pss3}, {pid, Horizon::M6, m6, pss6}};
}

}  // namespace

TEST_CASE("build_bags respects the assessment cutoff") {
    const Date m3 = make_date(2024, 4, 1), m6 = make_date(2024, 7, 1);
    std::map<std::string, std::vector<encoder::Embedding>> per;
    per["P1"] = {emb("P1", m3 - std::chrono::days{30}, Modality::Ecg), emb("P1", m3, Modality::Sleep),
                 emb("P1", m3 + std::chrono::days{1}, Modality::Activity)};
    const auto a = assess("P1", m3, m6);

    const auto r3 = build_bags(per, a, HorizonSetting::M3toM3);
    REQUIRE(r3.bags.size() == 1);
    CHECK(r3.bags[0].size() == 2);
    CHECK(r3.bags[0].target == 12.0);
    CHECK(r3.bags[0].horizon == Horizon::M3);
    const auto r6 = build_bags(per, a, HorizonSetting::AllToM6);
    REQUIRE(r6.bags.size() == 1);
    CHECK(r6.bags[0].size() == 3);
    CHECK(r6.bags[0].target == 18.0);
    CHECK(r6.bags[0].id() == "P1_M6");

    for (const auto& b : r3.bags)
        for (const auto& t : b.span_ends) CHECK(t <= eligibility_cutoff(m3));
    CHECK(eligibility_cutoff(m3) == at_midnight(m3 + std::chrono::days{1}));
}

TEST_CASE("three early instances appear in both bags") {
    const Date m3 = make_date(2024, 4, 1), m6 = make_date(2024, 7, 1);
    std::map<std::string, std::vector<encoder::Embedding>> per;
    for (int d : {5, 20, 60}) per["P1"].push_back(emb("P1", m3 - std::chrono::days{d}, Modality::Ecg));
    const auto a = assess("P1", m3, m6);
    CHECK(build_bags(per, a, HorizonSetting::M3toM3).bags.at(0).size() == 3);
    CHECK(build_bags(per, a, HorizonSetting::AllToM6).bags.at(0).size() == 3);
}

TEST_CASE("missing labels and empty patients are skipped") {
    const Date m3 = make_date(2024, 4, 1);
    std::map<std::string, std::vector<encoder::Embedding>> per;
    per["P1"] = {emb("P1", m3 - std::chrono::days{3}, Modality::Ecg)};
    per["P2"] = {emb("P2", m3 + std::chrono::days{3}, Modality::Ecg)};
    std::vector<Assessment> a = {{"P1", Horizon::M3, m3, 10}, {"P2", Horizon::M3, m3, 10}};
    const auto r6 = build_bags(per, a, HorizonSetting::AllToM6);
    CHECK(r6.bags.empty());
    const auto r3 = build_bags(per, a, HorizonSetting::M3toM3);
    REQUIRE(r3.bags.size() == 1);
    CHECK(r3.bags[0].patient_id == "P1");
    REQUIRE(r3.skipped.size() == 1);
    CHECK(r3.skipped[0].rfind("P2", 0) == 0);
}

TEST_CASE("M6 on or before M3 is a data error") {
    const Date m3 = make_date(2024, 4, 1);
    std::map<std::string, std::vector<encoder::Embedding>> per;
    per["P1"] = {emb("P1", m3 - std::chrono::days{3}, Modality::Ecg)};
    CHECK_THROWS_AS(build_bags(per, assess("P1", m3, m3), HorizonSetting::M3toM3), DataError);
    CHECK_THROWS_AS(build_bags(per, assess("P1", m3, m3 - std::chrono::days{9}), HorizonSetting::AllToM6), DataError);
}

TEST_CASE("cap_instances") {
    Rng rng(5);
    const auto b512 = testutil::random_bag(rng, 512, 8);
    CHECK(cap_instances(b512, 512, 1) == b512);
    const auto b1 = testutil::random_bag(rng, 1, 8);
    CHECK(cap_instances(b1, 512, 1) == b1);

    const auto b700 = testutil::random_bag(rng, 700, 8);
    const auto c = cap_instances(b700, 512, 1);
    CHECK(c.size() == 512);
    CHECK(c.embeddings.size() == 512 * 8);
    CHECK(cap_instances(b700, 512, 1) == c);
    CHECK(cap_instances(b700, 512, 2) != c);
    // Kept rows stay aligned and in original order.
    std::size_t j = 0;
    for (std::size_t i = 0; i < 700 && j < 512; ++i)
        if (b700.instants[i] == c.instants[j]) {
            CHECK(std::equal(c.row(j).begin(), c.row(j).end(), b700.row(i).begin()));
            CHECK(c.modality_ids[j] == b700.modality_ids[i]);
            ++j;
        }
    CHECK(j == 512);

    const auto latest = cap_instances(b700, 512, 1, CapPolicy::Latest);
    CHECK(latest.instants.front() == b700.instants[188]);
    CHECK(latest.instants.back() == b700.instants.back());
    CHECK_THROWS_AS(cap_instances(b700, 0, 1), ArgumentError);
}

TEST_CASE("modality sets and filtering") {
    CHECK(ModalitySet::parse("all") == ModalitySet::all());
    const auto ps = ModalitySet::parse("ps");
    CHECK(ps.contains(Modality::Activity));
    CHECK(ps.contains(Modality::Sleep));
    CHECK_FALSE(ps.contains(Modality::Ecg));
    CHECK(ModalitySet::parse("se").name() == "se");
    CHECK_THROWS_AS(ModalitySet::parse("px"), ArgumentError);

    Rng rng(3);
    const auto b = testutil::random_bag(rng, 60, 4);
    const auto f = filter_modalities(b, ps);
    std::size_t expected = 0;
    for (auto m : b.modality_ids) expected += m != 0;
    CHECK(f.size() == expected);
    for (auto m : f.modality_ids) CHECK(m != 0);
    const std::vector<Bag> both = {b, f};
    const auto counts = tabulate_modalities(both);
    CHECK(counts[0] + counts[1] + counts[2] == 60 + expected);
}

TEST_CASE("WMB1 codec") {
    const auto dir = testutil::scratch("bags");
    Rng rng(7);
    auto b = testutil::random_bag(rng, 33, 192);
    b.embeddings[5] = -0.0f;
    b.embeddings[7] = 1e-38f;
    write_bag(b, dir / "b.wmb");
    CHECK(read_bag(dir / "b.wmb") == b);
    auto cache = b;
    cache.horizon.reset();
    cache.target.reset();
    CHECK(decode_bag(encode_bag(cache)) == cache);

    auto bytes = encode_bag(b);
    bytes[0] = 'X', bytes[1] = 'X', bytes[2] = 'X', bytes[3] = 'X';
    CHECK_THROWS_AS(decode_bag(bytes), FormatError);
    auto cut = encode_bag(b);
    cut.resize(cut.size() / 2);
    CHECK_THROWS_AS(decode_bag(cut), FormatError);
}

namespace {

std::vector<std::uint8_t> inflate_body(const std::vector<std::uint8_t>& container) {
    std::uint64_t len = 0;
    for (int i = 0; i < 8; ++i) len |= std::uint64_t{container[4 + i]} << (8 * i);
    std::vector<std::uint8_t> body(len);
    uLongf out = static_cast<uLongf>(len);
    REQUIRE(uncompress(body.data(), &out, container.data() + 12, container.size() - 12) == Z_OK);
    return body;
}

std::vector<std::uint8_t> deflate_container(const std::vector<std::uint8_t>& body) {
    uLongf n = compressBound(body.size());
    std::vector<std::uint8_t> out(12 + n);
    std::memcpy(out.data(), "WMB1", 4);
    for (int i = 0; i < 8; ++i) out[4 + i] = static_cast<std::uint8_t>(std::uint64_t{body.size()} >> (8 * i));
    REQUIRE(compress(out.data() + 12, &n, body.data(), body.size()) == Z_OK);
    out.resize(12 + n);
    return out;
}

std::size_t header_end(const std::vector<std::uint8_t>& body) {
    return 4 + (std::size_t{body[0]} | std::size_t{body[1]} << 8 | std::size_t{body[2]} << 16 |
                std::size_t{body[3]} << 24);
}

}  // namespace

TEST_CASE("a header claiming more rows than stored is a truncation error") {
    Rng rng(8);
    const auto b = testutil::random_bag(rng, 5, 192);
    auto body = inflate_body(encode_bag(b));
    // Re-packing the untouched body decodes to the same bag.
    CHECK(decode_bag(deflate_container(body)) == b);
    const auto row0 = static_cast<std::ptrdiff_t>(header_end(body));
    body.erase(body.begin() + row0, body.begin() + row0 + 192 * 4);
    try {
        decode_bag(deflate_container(body));
        FAIL("expected FormatError");
    } catch (const FormatError& e) {
        CHECK(std::string(e.what()).find("truncated") != std::string::npos);
        CHECK(e.offset == body.size());
    }
}

TEST_CASE("a header dimension other than 192 is rejected") {
    Rng rng(9);
    const auto b = testutil::random_bag(rng, 2, 192);
    auto body = inflate_body(encode_bag(b));
    const std::size_t end = header_end(body);
    std::string header(body.begin() + 4, body.begin() + static_cast<std::ptrdiff_t>(end));
    const auto at = header.find("\"dim\":192");
    REQUIRE(at != std::string::npos);
    header.replace(at, 9, "\"dim\":191");
    std::copy(header.begin(), header.end(), body.begin() + 4);
    CHECK_THROWS_AS(decode_bag(deflate_container(body)), FormatError);

    auto junk = encode_bag(b);
    junk.push_back(0);
    CHECK_THROWS_AS(decode_bag(junk), FormatError);
    std::vector<std::uint8_t> tiny = {'W', 'M', 'B', '1', 1};
    try {
        decode_bag(tiny);
        FAIL("expected FormatError");
    } catch (const FormatError& e) {
        CHECK(e.offset == tiny.size());
    }
    CHECK_THROWS_AS(read_bag(testutil::scratch("missing") / "nope.wmb"), DataError);
}

TEST_CASE("assessments CSV round-trip") {
    const auto dir = testutil::scratch("assess");
    const auto a = assess("P7", make_date(2024, 4, 1), make_date(2024, 7, 1), 3, 40);
    write_assessments_csv(dir / "a.csv", a);
    const auto back = read_assessments_csv(dir / "a.csv");
    REQUIRE(back.size() == 2);
    CHECK(back[1].pss == 40);
    CHECK(back[1].horizon == Horizon::M6);
    CHECK(back[0].date == make_date(2024, 4, 1));
}
