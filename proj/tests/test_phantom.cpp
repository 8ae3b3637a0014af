#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>

#include <stdexcept>

#include "doctest.h"
#include "oat/image_io.hpp"
#include "oat/phantom.hpp"
#include "oat/rng.hpp"

using namespace oat;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_SUITE_BEGIN("phantom");

TEST_CASE("generation is deterministic per seed") {
  const ImagingGrid grid = build_grid(64, 64, 120e-6, 120e-6);
  const Phantom a = generate_vessel_phantom(grid, 123);
  const Phantom b = generate_vessel_phantom(grid, 123);
  CHECK(std::memcmp(a.image.data.data(), b.image.data.data(),
                    a.image.data.size() * sizeof(double)) == 0);
  const Phantom c = generate_vessel_phantom(grid, 124);
  CHECK(std::memcmp(a.image.data.data(), c.image.data.data(),
                    a.image.data.size() * sizeof(double)) != 0);
}

TEST_CASE("default parameters keep the vasculature density in band") {
  const ImagingGrid grid = build_grid(64, 64, 120e-6, 120e-6);
  for (int seed = 0; seed < 1000; ++seed) {
    const Phantom p = generate_vessel_phantom(grid, static_cast<std::uint64_t>(seed));
    const double frac = p.foreground_fraction();
    CHECK(frac >= 0.005);
    CHECK(frac <= 0.30);
    for (double v : p.image.data) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
}

TEST_CASE("thin sparse trees carry less foreground than thick dense ones") {
  const ImagingGrid grid = build_grid(64, 64, 120e-6, 120e-6);
  PhantomParams thin;
  thin.branches_min = thin.branches_max = 2;
  thin.thickness_min = thin.thickness_max = 1.0;
  PhantomParams thick;
  thick.branches_min = thick.branches_max = 8;
  thick.thickness_min = thick.thickness_max = 3.0;

  double mean_thin = 0.0, mean_thick = 0.0;
  for (int seed = 0; seed < 100; ++seed) {
    mean_thin += generate_vessel_phantom(grid, static_cast<std::uint64_t>(seed), thin)
                     .foreground_fraction();
    mean_thick += generate_vessel_phantom(grid, static_cast<std::uint64_t>(seed), thick)
                      .foreground_fraction();
  }
  CHECK(mean_thin < mean_thick);
}

TEST_CASE("degenerate parameters are rejected") {
  const ImagingGrid grid = build_grid(32, 32, 120e-6, 120e-6);
  PhantomParams params;
  params.branches_min = 0;
  params.branches_max = 0;
  CHECK_THROWS_AS(generate_vessel_phantom(grid, 1, params), std::invalid_argument);
  params = {};
  params.thickness_min = 2.0;
  params.thickness_max = 1.0;
  CHECK_THROWS_AS(generate_vessel_phantom(grid, 1, params), std::invalid_argument);
}

TEST_CASE("identity augmentation is a no-op") {
  const ImagingGrid grid = build_grid(32, 32, 120e-6, 120e-6);
  const Phantom p = generate_vessel_phantom(grid, 5);
  const Phantom q = augment_with(p, AugmentOp{});
  CHECK(std::memcmp(p.image.data.data(), q.image.data.data(),
                    p.image.data.size() * sizeof(double)) == 0);
}

TEST_CASE("half-turn twice is the identity") {
  const ImagingGrid grid = build_grid(32, 32, 120e-6, 120e-6);
  const Phantom p = generate_vessel_phantom(grid, 6);
  AugmentOp half;
  half.quarter_turns = 2;
  const Phantom once = augment_with(p, half);
  const Phantom twice = augment_with(once, half);
  CHECK(std::memcmp(p.image.data.data(), twice.image.data.data(),
                    p.image.data.size() * sizeof(double)) == 0);
  CHECK(std::memcmp(p.image.data.data(), once.image.data.data(),
                    p.image.data.size() * sizeof(double)) != 0);
}

TEST_CASE("four quarter-turns and double flips are identities") {
  const ImagingGrid grid = build_grid(32, 32, 120e-6, 120e-6);
  const Phantom p = generate_vessel_phantom(grid, 7);
  AugmentOp quarter;
  quarter.quarter_turns = 1;
  Phantom r = p;
  for (int t = 0; t < 4; ++t) r = augment_with(r, quarter);
  CHECK(std::memcmp(p.image.data.data(), r.image.data.data(),
                    p.image.data.size() * sizeof(double)) == 0);

  AugmentOp flips;
  flips.flip_h = true;
  flips.flip_v = true;
  const Phantom f2 = augment_with(augment_with(p, flips), flips);
  CHECK(std::memcmp(p.image.data.data(), f2.image.data.data(),
                    p.image.data.size() * sizeof(double)) == 0);
}

TEST_CASE("translation composition restores the interior and zeroes the margin") {
  const ImagingGrid grid = build_grid(32, 32, 120e-6, 120e-6);
  Phantom p = generate_vessel_phantom(grid, 8);
  for (double& v : p.image.data) v = std::max(v, 0.05);  // make the margin visible

  AugmentOp right;
  right.shift_x = 3;
  AugmentOp left;
  left.shift_x = -3;
  const Phantom round = augment_with(augment_with(p, right), left);

  for (int j = 0; j < 32; ++j) {
    for (int i = 0; i < 32; ++i) {
      if (i >= 29) {
        CHECK(round.image.at(i, j) == 0.0);  // wrapped margin zero-filled
      } else {
        CHECK(round.image.at(i, j) == p.image.at(i, j));
      }
    }
  }
}

TEST_CASE("random augmentation is seeded and stays in range") {
  const ImagingGrid grid = build_grid(40, 40, 120e-6, 120e-6);
  const Phantom p = generate_vessel_phantom(grid, 9);
  const Phantom a = augment(p, 1000);
  const Phantom b = augment(p, 1000);
  CHECK(std::memcmp(a.image.data.data(), b.image.data.data(),
                    a.image.data.size() * sizeof(double)) == 0);
  CHECK(std::abs(a.augment_record.shift_x) <= 4);
  CHECK(std::abs(a.augment_record.shift_y) <= 4);
  for (double v : a.image.data) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("an all-white import becomes an all-ones phantom") {
  const ImagingGrid grid = build_grid(16, 16, 120e-6, 120e-6);
  Image white(8, 8);
  for (double& v : white.data) v = 1.0;
  const std::string path = temp_path("oat_white.png");
  write_png8(path, white, 0.0, 1.0);
  const Phantom p = import_image(path, grid);
  for (double v : p.image.data) CHECK(v == 1.0);
}

TEST_CASE("downsampling by two averages 2x2 blocks") {
  // hand-written 8-bit PGM with a known pattern
  const std::string path = temp_path("oat_pattern.pgm");
  {
    std::ofstream out(path, std::ios::binary);
    out << "P5\n4 4\n255\n";
    const unsigned char bytes[16] = {0,   255, 10,  20,  255, 0,   30,  40,
                                     100, 100, 200, 200, 100, 100, 200, 200};
    out.write(reinterpret_cast<const char*>(bytes), 16);
  }
  const ImagingGrid grid = build_grid(2, 2, 1e-4, 1e-4);
  const Phantom p = import_image(path, grid);
  CHECK(p.image.at(0, 0) == doctest::Approx((0 + 255 + 255 + 0) / (4.0 * 255.0)));
  CHECK(p.image.at(1, 0) == doctest::Approx((10 + 20 + 30 + 40) / (4.0 * 255.0)));
  CHECK(p.image.at(0, 1) == doctest::Approx(100.0 / 255.0));
  CHECK(p.image.at(1, 1) == doctest::Approx(200.0 / 255.0));
}

TEST_CASE("ascii PGM and binary PGM agree") {
  const std::string p5 = temp_path("oat_bin.pgm");
  const std::string p2 = temp_path("oat_ascii.pgm");
  {
    std::ofstream out(p5, std::ios::binary);
    out << "P5\n2 2\n255\n";
    const unsigned char bytes[4] = {0, 64, 128, 255};
    out.write(reinterpret_cast<const char*>(bytes), 4);
  }
  {
    std::ofstream out(p2);
    out << "P2\n# comment line\n2 2\n255\n0 64\n128 255\n";
  }
  const ImagingGrid grid = build_grid(2, 2, 1e-4, 1e-4);
  const Phantom a = import_image(p5, grid);
  const Phantom b = import_image(p2, grid);
  CHECK(std::memcmp(a.image.data.data(), b.image.data.data(),
                    a.image.data.size() * sizeof(double)) == 0);
}

TEST_CASE("export/import round trip stays within one 8-bit step") {
  const ImagingGrid grid = build_grid(32, 32, 120e-6, 120e-6);
  const Phantom p = generate_vessel_phantom(grid, 11);
  const std::string path = temp_path("oat_roundtrip.png");
  write_png16(path, p.image, 0.0, 1.0);
  const Phantom q = import_image(path, grid);
  double worst = 0.0;
  for (std::size_t i = 0; i < p.image.size(); ++i)
    worst = std::max(worst, std::abs(p.image.data[i] - q.image.data[i]));
  CHECK(worst <= 1.0 / 255.0);
}

TEST_CASE("unsupported imports are rejected") {
  const std::string path = temp_path("oat_garbage.png");
  {
    std::ofstream out(path, std::ios::binary);
    out << "this is not an image";
  }
  CHECK_THROWS(import_image(path, build_grid(8, 8, 1e-4, 1e-4)));
  CHECK_THROWS(import_image(temp_path("oat_missing_file.png"),
                            build_grid(8, 8, 1e-4, 1e-4)));
}

TEST_CASE("environment dataset splits by base phantom and is reproducible") {
  const ImagingGrid grid = build_grid(32, 32, 120e-6, 120e-6);
  NominalParams nominal;
  nominal.n_t = 512;
  EnvironmentSpec spec;
  spec.n_detectors = 4;
  spec.position_uncertainty_pct = 0.1;
  spec.label = "unit";

  const DatasetSplit split =
      build_environment_dataset(spec, 15, 4, 0.8, 99, grid, nominal);
  CHECK(split.train.size() == 48);       // 12 base phantoms * 4
  CHECK(split.validation.size() == 12);  // 3 base phantoms * 4

  // augmented copies never cross the split of their base phantom
  std::set<std::string> train_bases, val_bases;
  for (const auto& s : split.train) train_bases.insert(s.phantom.provenance);
  for (const auto& s : split.validation) val_bases.insert(s.phantom.provenance);
  for (const auto& base : val_bases) CHECK(train_bases.count(base) == 0);
  CHECK(train_bases.size() == 12);
  CHECK(val_bases.size() == 3);

  const DatasetSplit again =
      build_environment_dataset(spec, 15, 4, 0.8, 99, grid, nominal);
  REQUIRE(again.train.size() == split.train.size());
  for (std::size_t i = 0; i < split.train.size(); ++i) {
    CHECK(std::memcmp(split.train[i].sinogram.data.data(),
                      again.train[i].sinogram.data.data(),
                      split.train[i].sinogram.data.size() * sizeof(double)) == 0);
    CHECK(std::memcmp(split.train[i].lbp.data.data(), again.train[i].lbp.data.data(),
                      split.train[i].lbp.data.size() * sizeof(double)) == 0);
  }

  // thread count must not change the result
  const DatasetSplit parallel =
      build_environment_dataset(spec, 15, 4, 0.8, 99, grid, nominal, {}, 4);
  for (std::size_t i = 0; i < split.train.size(); ++i)
    CHECK(std::memcmp(split.train[i].sinogram.data.data(),
                      parallel.train[i].sinogram.data.data(),
                      split.train[i].sinogram.data.size() * sizeof(double)) == 0);
}

TEST_CASE("dataset construction validates its inputs") {
  const ImagingGrid grid = build_grid(16, 16, 120e-6, 120e-6);
  NominalParams nominal;
  EnvironmentSpec spec;
  spec.n_detectors = 2;
  CHECK_THROWS_AS(build_environment_dataset(spec, 0, 2, 0.8, 1, grid, nominal),
                  std::invalid_argument);
  CHECK_THROWS_AS(build_environment_dataset(spec, 4, 0, 0.8, 1, grid, nominal),
                  std::invalid_argument);
  CHECK_THROWS_AS(build_environment_dataset(spec, 4, 2, 1.5, 1, grid, nominal),
                  std::invalid_argument);
}

TEST_SUITE_END();
