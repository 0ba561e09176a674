#include <gtest/gtest.h>

#include <filesystem>

#include "flatsurr/core/binary_io.hpp"
#include "flatsurr/models/checkpoint.hpp"
#include "flatsurr/optim/train.hpp"
#include "test_util.hpp"

using namespace flatsurr;
using namespace flatsurr::testing;

namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("flatsurr_" + name + "_" + std::to_string(::getpid()));
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST(BuildModel, SameSeedIsBitIdentical) {
  ArchSpec spec{Family::mlp, {8}, 0, {4}, 2};
  auto a = build_model<float>(spec, 7);
  auto b = build_model<float>(spec, 7);
  EXPECT_EQ(a.params, b.params);
  EXPECT_EQ(a.params.hash(), b.params.hash());
  auto c = build_model<float>(spec, 8);
  EXPECT_FALSE(a.params == c.params);
}

TEST(BuildModel, MiniResnetNeedsABlock) {
  ArchSpec spec{Family::miniresnet, {4}, 0, {1, 8, 8}, 3};
  EXPECT_THROW(build_graph(spec), SpecError);
  ArchSpec one_class{Family::mlp, {4}, 0, {3}, 1};
  EXPECT_THROW(build_graph(one_class), SpecError);
}

TEST(BuildModel, MlpParameterCount) {
  for (auto [D, H, C] : {std::tuple<Index, Index, Index>{4, 8, 2}, {10, 3, 5}, {1, 1, 2}}) {
    ArchSpec spec{Family::mlp, {H}, 0, {D}, C};
    auto m = build_model<double>(spec, 1);
    EXPECT_EQ(m.params.trainable_numel(), D * H + H + H * C + C);
  }
}

TEST(BuildModel, InitializationRanges) {
  ArchSpec spec{Family::miniresnet, {4}, 2, {1, 8, 8}, 3};
  auto m = build_model<double>(spec, 3);
  for (std::size_t i = 0; i < m.params.count(); ++i) {
    const auto& ps = m.graph.params()[i];
    const auto& v = m.params.tensors[i].vec();
    switch (ps.role) {
      case ParamRole::weight:
        EXPECT_LE(v.cwiseAbs().maxCoeff(), std::sqrt(6.0 / static_cast<double>(ps.fan_in)));
        break;
      case ParamRole::bn_scale:
      case ParamRole::bn_running_var:
        EXPECT_TRUE((v.array() == 1.0).all());
        break;
      default:
        EXPECT_TRUE((v.array() == 0.0).all()) << ps.name;
    }
  }
}

TEST(Predict, EvalModeIsIdempotentAndSideEffectFree) {
  ArchSpec spec{Family::smallcnn, {3, 4}, 0, {1, 8, 8}, 3};
  auto m = build_model<float>(spec, 2);
  auto x = random_tensor({3, 1, 8, 8}, 3, 0, 1).cast<float>();
  const auto h = m.params.hash();
  auto a = predict(m.graph, m.params, x);
  auto b = predict(m.graph, m.params, x);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.shape(), (Shape{3, 3}));
  EXPECT_EQ(h, m.params.hash());
}

TEST(Predict, EvalModeIsBatchIndependent) {
  ArchSpec spec{Family::miniresnet, {4}, 1, {1, 8, 8}, 3};
  auto m = build_model<double>(spec, 4);
  auto x = random_tensor({3, 1, 8, 8}, 5, 0, 1);
  auto all = predict(m.graph, m.params, x);
  auto one = predict(m.graph, m.params, x.rows(1, 2));
  EXPECT_LT((all.rows(1, 2).vec() - one.vec()).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Predict, TrainedToyModelSeparatesBlobs) {
  auto [x, y] = toy_blobs(200, 9);
  ArchSpec spec{Family::mlp, {8}, 0, {2}, 2};
  auto m = build_model<double>(spec, 1);
  OptimizerSpec opt;
  opt.schedule = Schedule::constant(0.05);
  TrainOptions to;
  to.batch_size = 32;
  auto traj = train(m.graph, m.params, x, y, opt, 10, 3, {}, to);
  EXPECT_GT(accuracy(m.graph, traj.final_params, x, y), 0.9);
}

TEST(RefreshBn, NoBatchNormLeavesParamsUnchanged) {
  ArchSpec spec{Family::mlp, {4}, 0, {3}, 2};
  auto m = build_model<double>(spec, 1);
  auto before = m.params;
  refresh_bn_stats(m.graph, m.params, random_tensor({10, 3}, 2), 1.0);
  EXPECT_EQ(before, m.params);
  EXPECT_THROW(refresh_bn_stats(m.graph, m.params, random_tensor({10, 3}, 2), 0.0), SpecError);
  EXPECT_THROW(refresh_bn_stats(m.graph, m.params, random_tensor({10, 3}, 2), 1.5), SpecError);
}

TEST(RefreshBn, ConstantInputGivesMeanCAndZeroVariance) {
  Graph g({2});
  int h = g.batch_norm(0, "bn");
  g.flatten(h);
  g.linear(g.nodes().size() - 1, 2, "head");
  auto p = init_params<double>(g, 1);
  Tensor<double> x = Tensor<double>::constant({20, 2}, 1.5);
  refresh_bn_stats(g, p, x, 1.0, 0, 7);
  EXPECT_LT((p.at("bn.running_mean").vec().array() - 1.5).abs().maxCoeff(), 1e-12);
  EXPECT_LT(p.at("bn.running_var").vec().cwiseAbs().maxCoeff(), 1e-12);
}

TEST(RefreshBn, ChangesEvalLossButNotWeights) {
  ArchSpec spec{Family::smallcnn, {3}, 0, {1, 6, 6}, 2};
  auto m = build_model<double>(spec, 6);
  auto x = random_tensor({40, 1, 6, 6}, 7, 0.5, 2.0);
  auto y = random_labels(40, 2, 8);
  const double before = loss_value(m.graph, m.params, x, y);
  auto p = m.params;
  refresh_bn_stats(m.graph, p, x, 0.5, 3);
  EXPECT_NE(before, loss_value(m.graph, p, x, y));
  for (std::size_t i = 0; i < p.count(); ++i)
    if (p.trainable[i]) {
      EXPECT_EQ(p.tensors[i], m.params.tensors[i]) << p.names[i];
    }
}

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
  ArchSpec spec{Family::miniresnet, {4}, 1, {1, 8, 8}, 3};
  auto m = build_model<float>(spec, 11);
  auto dir = temp_dir("ckpt");
  const auto a = (dir / "a.fskp").string(), b = (dir / "b.fskp").string();
  save_checkpoint(a, make_checkpoint(m.params, {4, 11, "sam", "abc"}));
  auto loaded = load_checkpoint(a, m.graph);
  EXPECT_EQ(loaded.meta.epoch, 4);
  EXPECT_EQ(loaded.meta.optimizer, "sam");
  EXPECT_EQ(loaded.params, m.params);
  save_checkpoint(b, loaded);
  EXPECT_EQ(io::read_file(a), io::read_file(b));
  fs::remove_all(dir);
}

TEST(Checkpoint, HeaderLayout) {
  Graph g({1}, LossKind::half_squared_error);
  g.linear(0, 1, "u");
  auto p = ParamSet<float>::zeros_like(g);
  p.at("u.weight")[0] = 1.0f;
  auto bytes = encode_checkpoint(make_checkpoint(p, {0, 1, "sgd", ""}));
  ASSERT_GT(bytes.size(), 12u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "FSKP");
  EXPECT_EQ(bytes[4], 1);
  EXPECT_EQ(bytes[5] | bytes[6] | bytes[7], 0);
  // Tail: last tensor is u.bias, shape (1), payload 0.0f.
  EXPECT_EQ(std::vector<unsigned char>(bytes.end() - 4, bytes.end()), std::vector<unsigned char>(4, 0));
}

TEST(Checkpoint, CorruptionIsDetected) {
  ArchSpec spec{Family::mlp, {4}, 0, {3}, 2};
  ArchSpec other{Family::mlp, {5}, 0, {3}, 2};
  auto m = build_model<float>(spec, 1);
  auto dir = temp_dir("corrupt");
  const auto path = (dir / "m.fskp").string();
  save_checkpoint(path, make_checkpoint(m.params, {0, 1, "sgd", ""}));
  EXPECT_THROW(load_checkpoint(path, build_graph(other)), FingerprintMismatch);
  auto bytes = io::read_file(path);
  auto truncated = bytes;
  truncated.resize(bytes.size() - 3);
  EXPECT_THROW(decode_checkpoint(truncated), Truncated);
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bad), BadMagic);
  fs::remove_all(dir);
}
