#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>

#include "afp/io.hpp"
#include "afp/rng.hpp"
#include "afp/volume.hpp"

using namespace afp;

namespace {

std::string tmp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

Volume random_volume(Rng& rng, Shape3 shape, Vec3 spacing = {1, 1, 1}) {
    Volume v(shape, 0.f, spacing);
    for (auto& x : v.data) x = static_cast<float>(rng.uniform(-10, 10));
    return v;
}

} // namespace

TEST_CASE("volume invariants enforced") {
    Volume v({4, 4, 4}, 1.f);
    REQUIRE_NOTHROW(v.validate());

    v.data[3] = std::numeric_limits<float>::quiet_NaN();
    v.data[9] = std::numeric_limits<float>::infinity();
    try {
        v.validate();
        FAIL("expected NONFINITE_VALUES");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::NONFINITE_VALUES);
        CHECK(std::string(e.what()).find("2") != std::string::npos); // voxel count reported
    }

    Volume bad_spacing({4, 4, 4});
    bad_spacing.spacing[1] = 0.0;
    CHECK_THROWS_AS(bad_spacing.validate(), Error);
}

TEST_CASE("check_alignment tolerance semantics") {
    Volume a({8, 8, 8});
    Volume b = a;
    CHECK(check_alignment(a, b, 0.0));

    b.spacing[0] += 0.5;
    CHECK_FALSE(check_alignment(a, b, 1e-3));

    b.spacing[0] = a.spacing[0] + 1e-6;
    CHECK(check_alignment(a, b, 1e-3));

    Volume c({8, 8, 4});
    CHECK_FALSE(check_alignment(a, c, 1.0));
}

TEST_CASE("raw_json round trip is bit exact") {
    Rng rng(7);
    for (int trial = 0; trial < 100; ++trial) {
        Shape3 sh{static_cast<std::int64_t>(2 + rng.uniform_int(6)),
                  static_cast<std::int64_t>(2 + rng.uniform_int(6)),
                  static_cast<std::int64_t>(2 + rng.uniform_int(6))};
        Volume v = random_volume(rng, sh, {rng.uniform(0.2, 3), rng.uniform(0.2, 3), rng.uniform(0.2, 3)});
        v.origin = {rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-5, 5)};
        v.modality = Modality::MR;
        std::string p = tmp_path("rt_case.raw");
        save_volume(v, p, VolumeFormat::RAW_JSON);
        Volume w = load_volume(p, VolumeFormat::RAW_JSON);
        REQUIRE(w.shape == v.shape);
        CHECK(w.data == v.data);
        CHECK(w.spacing == v.spacing);
        CHECK(w.origin == v.origin);
        CHECK(w.modality == Modality::MR);
    }
}

TEST_CASE("raw_json sidecar drives geometry") {
    // 4x4x4 raw file of 64 reals with spacing (2,1,1) in the sidecar
    Volume v({4, 4, 4}, 0.f, {2, 1, 1});
    for (std::size_t i = 0; i < v.data.size(); ++i) v.data[i] = static_cast<float>(i);
    std::string p = tmp_path("sidecar_case.raw");
    save_volume(v, p, VolumeFormat::RAW_JSON);
    Volume w = load_volume(p, VolumeFormat::RAW_JSON);
    CHECK(w.spacing == Vec3{2, 1, 1});
    CHECK(w.data == v.data);
}

TEST_CASE("nifti round trip and header echo") {
    Rng rng(11);
    Volume v = random_volume(rng, {8, 8, 8});
    v.spacing = {0.6, 0.6, 0.6};
    std::string p = tmp_path("case.nii");
    save_volume(v, p, VolumeFormat::NIFTI1);
    Volume w = load_volume(p, VolumeFormat::NIFTI1);
    CHECK(w.shape == Shape3{8, 8, 8});
    for (int a = 0; a < 3; ++a)
        CHECK(w.spacing[a] == Catch::Approx(0.6).margin(1e-6));
    CHECK(w.data == v.data); // float32 content is preserved exactly

    // gz variant
    std::string pz = tmp_path("case.nii.gz");
    save_volume(v, pz, VolumeFormat::NIFTI1);
    Volume wz = load_volume(pz, VolumeFormat::NIFTI1);
    CHECK(wz.data == v.data);
}

TEST_CASE("zero volume round trip") {
    Volume v({2, 2, 2}, 0.f);
    std::string p = tmp_path("zeros.raw");
    save_volume(v, p, VolumeFormat::RAW_JSON);
    Volume w = load_volume(p, VolumeFormat::RAW_JSON);
    REQUIRE(w.data.size() == 8);
    for (float x : w.data) CHECK(x == 0.f);
}

TEST_CASE("load errors") {
    CHECK_THROWS_AS(load_volume(tmp_path("does_not_exist.nii"), VolumeFormat::NIFTI1), Error);

    // NaN voxels must be rejected at load with a count
    Volume v({3, 3, 3}, 1.f);
    std::string p = tmp_path("nanvol.raw");
    save_volume(v, p, VolumeFormat::RAW_JSON);
    // poke a NaN directly into the blob
    {
        std::fstream f(p, std::ios::in | std::ios::out | std::ios::binary);
        float nan = std::numeric_limits<float>::quiet_NaN();
        f.write(reinterpret_cast<char*>(&nan), 4);
    }
    try {
        load_volume(p, VolumeFormat::RAW_JSON);
        FAIL("expected NONFINITE_VALUES");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::NONFINITE_VALUES);
    }
}

TEST_CASE("label volume io keeps names") {
    LabelVolume lv({4, 4, 4}, 0, {1, 1, 1});
    lv.label_names = {{1, "tube"}, {2, "blob"}};
    lv.at(1, 1, 1) = 1;
    lv.at(2, 2, 2) = 2;
    std::string p = tmp_path("labels.raw");
    save_labels(lv, p);
    LabelVolume w = load_labels(p);
    CHECK(w.labels == lv.labels);
    CHECK(w.label_names == lv.label_names);
}
