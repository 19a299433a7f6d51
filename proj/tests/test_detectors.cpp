#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "moco/data.hpp"
#include "moco/detectors.hpp"
#include "moco/rng.hpp"
#include "oracles.hpp"

using namespace moco;

TEST_CASE("tophat") {
  SUBCASE("constant image maps to zero") {
    Tensor img = Tensor::full({1, 1, 12, 12}, 3.5);
    Tensor out = tophat(img, 5);
    for (int64_t i = 0; i < out.numel(); ++i) CHECK(out[i] == 0.0);
  }
  SUBCASE("isolated bright pixel survives with its full value") {
    Tensor img({1, 1, 15, 15});
    img.at(0, 0, 7, 7) = 2.25;
    Tensor out = tophat(img, 5);
    CHECK(out.at(0, 0, 7, 7) == 2.25);
    CHECK(out.at(0, 0, 0, 0) == 0.0);
  }
  SUBCASE("random image matches the brute-force morphology oracle exactly") {
    Rng rng(3);
    for (int se : {3, 5, 7}) {
      Tensor img = rng.uniform_tensor({1, 1, 20, 17}, 0, 255);
      Tensor got = tophat(img, se);
      Tensor want = oracle::white_tophat(img, se);
      CHECK(max_abs_diff(got, want) == 0.0);
    }
  }
  SUBCASE("output is non-negative everywhere") {
    Rng rng(5);
    Tensor img = rng.uniform_tensor({1, 1, 25, 25}, -10, 250);
    Tensor out = tophat(img, 5);
    for (int64_t i = 0; i < out.numel(); ++i) CHECK(out[i] >= 0.0);
  }
  SUBCASE("undersized structuring element is rejected") {
    CHECK_THROWS_AS(tophat(Tensor({1, 1, 8, 8}), 2), Error);
  }
}

TEST_CASE("ilcm") {
  SUBCASE("constant image keeps its value in the valid interior") {
    Tensor img = Tensor::full({1, 1, 20, 20}, 4.0);
    Tensor out = ilcm(img, 3);
    const int64_t half = 4;
    for (int64_t y = half; y < 20 - half; ++y)
      for (int64_t x = half; x < 20 - half; ++x)
        CHECK(out.at(0, 0, y, x) == doctest::Approx(4.0).epsilon(1e-8));
    CHECK(out.at(0, 0, 0, 0) == 0.0);
  }
  SUBCASE("bright centre cell over dark surroundings") {
    const int cell = 3;
    Tensor img = Tensor::full({1, 1, 15, 15}, 1.0);
    for (int64_t y = 6; y <= 8; ++y)
      for (int64_t x = 6; x <= 8; ++x) img.at(0, 0, y, x) = 10.0;
    Tensor out = ilcm(img, cell);
    CHECK(out.at(0, 0, 7, 7) == doctest::Approx(100.0).epsilon(1e-8));
  }
  SUBCASE("random image matches the nine-cell-mean oracle exactly") {
    Rng rng(7);
    for (int cell : {3, 5}) {
      Tensor img = rng.uniform_tensor({1, 1, 26, 23}, 0, 255);
      Tensor got = ilcm(img, cell);
      Tensor want = oracle::ilcm(img, cell);
      CHECK(max_abs_diff(got, want) == 0.0);
    }
  }
  SUBCASE("image smaller than the cell window is rejected") {
    CHECK_THROWS_AS(ilcm(Tensor({1, 1, 8, 8}), 3), Error);
  }
}

TEST_CASE("ipi patch handling") {
  SUBCASE("window starts clamp the final window to the border") {
    auto starts = detail::window_starts(11, 4, 3);
    CHECK(starts == std::vector<int64_t>{0, 3, 6, 7});
    starts = detail::window_starts(10, 4, 3);
    CHECK(starts == std::vector<int64_t>{0, 3, 6});
  }
  SUBCASE("fold of the unfolded image reproduces it") {
    Rng rng(11);
    Tensor img = rng.uniform_tensor({1, 1, 18, 14}, 0, 255);
    PatchImageModel model = unfold_patches(img, 6, 3);
    Tensor back = fold_patches(model.patch_matrix, model, 18, 14);
    CHECK(max_abs_diff(back, img) <= 1e-12);
  }
}

TEST_CASE("ipi decomposition") {
  // Smooth rank-1 background shared by these cases.
  auto rank1_background = [](int64_t n) {
    Tensor img({1, 1, n, n});
    for (int64_t y = 0; y < n; ++y)
      for (int64_t x = 0; x < n; ++x)
        img.at(0, 0, y, x) = (100.0 + 50.0 * std::sin(2.2 * y / static_cast<double>(n))) *
                             (1.0 + 0.3 * std::cos(1.7 * x / static_cast<double>(n)));
    return img;
  };
  IpiParams params;
  params.block = 10;
  params.stride = 5;

  SUBCASE("pure low-rank background leaves a negligible sparse part") {
    Tensor img = rank1_background(40);
    PatchImageModel model;
    DetectionResult res = ipi(img, params, &model);
    CHECK(model.converged);
    CHECK(model.residual <= params.epsilon);
    CHECK(frobenius_norm(model.sparse) / frobenius_norm(model.patch_matrix) <= 1e-5);
  }
  SUBCASE("planted target is recovered at its centroid") {
    Tensor img = rank1_background(40);
    for (int64_t y = 19; y <= 21; ++y)
      for (int64_t x = 21; x <= 23; ++x) img.at(0, 0, y, x) += 30.0;
    PatchImageModel model;
    DetectionResult res = ipi(img, params, &model);
    CHECK(model.converged);
    int64_t by = 0, bx = 0;
    double best = -1e300;
    for (int64_t y = 0; y < 40; ++y)
      for (int64_t x = 0; x < 40; ++x)
        if (res.target_image.at(0, 0, y, x) > best) {
          best = res.target_image.at(0, 0, y, x);
          by = y;
          bx = x;
        }
    CHECK(std::abs(by - 20) <= 1);
    CHECK(std::abs(bx - 22) <= 1);
  }
  SUBCASE("non-convergence is reported through the flag") {
    IpiParams strict = params;
    strict.max_iter = 2;
    strict.epsilon = 1e-14;
    Tensor img = rank1_background(30);
    PatchImageModel model;
    ipi(img, strict, &model);
    CHECK(!model.converged);
    CHECK(model.iterations == 2);
  }
}

TEST_CASE("segment") {
  SUBCASE("all below threshold yields an empty list") {
    Tensor img = Tensor::full({1, 1, 10, 10}, 0.2);
    CHECK(segment(img, 0.5).empty());
  }
  SUBCASE("two disjoint blobs with correct centroids, ordered by score") {
    Tensor img({1, 1, 16, 16});
    img.at(0, 0, 3, 3) = 5.0;
    img.at(0, 0, 3, 4) = 5.0;
    img.at(0, 0, 12, 10) = 9.0;
    auto cands = segment(img, 1.0);
    REQUIRE(cands.size() == 2);
    CHECK(cands[0].score == 9.0);
    CHECK(cands[0].x == doctest::Approx(10.0));
    CHECK(cands[0].y == doctest::Approx(12.0));
    CHECK(cands[1].score == 5.0);
    CHECK(cands[1].x == doctest::Approx(3.5));
    CHECK(cands[1].y == doctest::Approx(3.0));
    for (size_t i = 1; i < cands.size(); ++i) CHECK(cands[i].score <= cands[i - 1].score);
  }
  SUBCASE("min_area filters single-pixel components") {
    Tensor img({1, 1, 8, 8});
    img.at(0, 0, 2, 2) = 3.0;
    img.at(0, 0, 5, 5) = 2.0;
    img.at(0, 0, 5, 6) = 2.0;
    auto cands = segment(img, 1.0, 2);
    REQUIRE(cands.size() == 1);
    CHECK(cands[0].area == 2);
  }
}

TEST_CASE("planted-target suite: every detector peaks at the target") {
  SynthSpec spec;
  spec.height = spec.width = 64;
  spec.frames = 1;
  spec.background_level = 0.2;
  spec.background_gradient = {0.1, 0.05};
  spec.noise_sigma = 0.004;
  spec.target_a = spec.target_b = 3;
  spec.target_peak = 0.5;  // ~128 gray levels of contrast
  spec.target_pos0 = {40, 24};
  spec.seed = 15;
  FrameSequence seq = synth_sequence(spec);
  DetectorParams params = DetectorParams::downsampled();
  params.tophat_se = 5;  // the opening must be wider than the 3x3 target
  for (const std::string name : {"tophat", "ilcm", "ipi"}) {
    Tensor target = run_detector(name, seq.frames[0], params);
    int64_t by = 0, bx = 0;
    double best = -1e300;
    for (int64_t y = 0; y < 64; ++y)
      for (int64_t x = 0; x < 64; ++x)
        if (target.at(0, 0, y, x) > best) {
          best = target.at(0, 0, y, x);
          by = y;
          bx = x;
        }
    CHECK_MESSAGE(std::abs(bx - 40) <= 1, name, " argmax x ", bx);
    CHECK_MESSAGE(std::abs(by - 24) <= 1, name, " argmax y ", by);
  }
}

TEST_CASE("detector params") {
  SUBCASE("table defaults") {
    DetectorParams p = DetectorParams::table_defaults();
    CHECK(p.tophat_se == 5);
    CHECK(p.ilcm_cell == 5);
    CHECK(p.ipi.block == 50);
    CHECK(p.ipi.stride == 10);
    CHECK(p.ipi.weight == 1.0);
    CHECK(p.ipi.epsilon == 1e-7);
  }
  SUBCASE("downsampled preset") {
    DetectorParams p = DetectorParams::downsampled();
    CHECK(p.tophat_se == 3);
    CHECK(p.ipi.block == 15);
    CHECK(p.ipi.stride == 3);
  }
  SUBCASE("key = value file overrides") {
    auto path = std::filesystem::temp_directory_path() / "moco_detector_params.cfg";
    std::ofstream(path.string()) << "# detector settings\n"
                                 << "tophat.se = 7\n"
                                 << "ipi.block = 20\n"
                                 << "ipi.epsilon = 1e-6\n";
    DetectorParams p = load_detector_params(path.string());
    CHECK(p.tophat_se == 7);
    CHECK(p.ipi.block == 20);
    CHECK(p.ipi.epsilon == doctest::Approx(1e-6));
    CHECK(p.ilcm_cell == 5);
    std::ofstream(path.string()) << "bogus.key = 3\n";
    CHECK_THROWS_AS(load_detector_params(path.string()), Error);
  }
  SUBCASE("unknown detector name is rejected") {
    DetectorParams p = DetectorParams::downsampled();
    CHECK_THROWS_AS(run_detector("sobel", Tensor({1, 1, 50, 50}), p), Error);
  }
}
