#include "support.hpp"

#include "wordflow/activation_dump.hpp"
#include "wordflow/adapter_rpc.hpp"
#include "wordflow/error.hpp"
#include "wordflow/toy_models.hpp"

#include <gtest/gtest.h>

#include <sys/socket.h>

#include <cmath>
#include <thread>

using namespace wordflow;

namespace {

ToyModelSpec tiny_bow() {
  ToyModelSpec s;
  s.variant = ToyVariant::BagOfEmbeddings;
  s.vocabulary = {"[UNK]", "[CLS]", "good", "bad"};
  s.embeddings.resize(4, 2);
  s.embeddings << 0, 0, 0, 0, 1, 0, 0, 1;
  s.token_maps.push_back(Eigen::MatrixXd());  // identity layer
  s.head.resize(2, 2);
  s.head << 2, -1, -1, 3;
  s.head_bias = Eigen::Vector2d(0.5, -0.5);
  return s;
}

}  // namespace

TEST(Adapter, SplitWordsLowercasesAndSeparatesPunctuation) {
  EXPECT_EQ(split_words("Hello, World!  A-b"),
            (std::vector<std::string>{"hello", ",", "world", "!", "a", "-", "b"}));
  EXPECT_TRUE(split_words("   ").empty());
}

TEST(Adapter, SoftmaxSumsToOneAndHandlesInfinities) {
  const std::vector<double> z{1000.0, 1000.0, -1000.0};
  const auto p = softmax(z);
  EXPECT_NEAR(p[0], 0.5, 1e-12);
  EXPECT_NEAR(p[2], 0.0, 1e-12);
  const std::vector<double> inf{INFINITY, 0.0};
  EXPECT_EQ(softmax(inf), (std::vector<double>{1.0, 0.0}));
}

TEST(ToyModel, BagOfEmbeddingsMatchesClosedForm) {
  ToyModel model(tiny_bow());
  const auto seq = model.tokenize("x", "good bad bad");
  const auto rec = model.forward_full(seq);
  ASSERT_EQ(rec.layer_count(), 2u);
  // Mean pooled state (1/3, 2/3); logits W * mean + b.
  const double l0 = 2.0 / 3.0 - 2.0 / 3.0 + 0.5;
  const double l1 = -1.0 / 3.0 + 2.0 - 0.5;
  const double p0 = 1.0 / (1.0 + std::exp(l1 - l0));
  EXPECT_NEAR(rec.class_scores[0], p0, 1e-12);
  EXPECT_NEAR(rec.class_scores[1], 1.0 - p0, 1e-12);
  EXPECT_EQ(rec.hidden[0][1], Eigen::Vector2d(0, 1));
}

TEST(ToyModel, UnknownWordsMapToUnk) {
  ToyModel model(tiny_bow());
  const auto rec = model.forward_full(model.tokenize("x", "zzz"));
  EXPECT_EQ(rec.hidden[0][0], Eigen::Vector2d(0, 0));
}

TEST(ToyModel, IdenticalTokensGiveUniformAttention) {
  auto spec = ToyModelSpec::random(ToyVariant::Attention, {"a", "b"}, 4, 2, 3, 11);
  spec.residual = 0.0;
  ToyModel model(spec);
  TokenSequence seq{"u", {"a", "a", "a"}, {false, false, false}};
  const auto rec = model.forward_full(seq);
  // Every query sees identical keys, so each output is the common input.
  for (std::size_t l = 1; l <= 3; ++l)
    for (const auto& v : rec.layer(l)) EXPECT_TRUE(v.isApprox(rec.hidden[0][0], 1e-12));
}

TEST(ToyModel, ForwardIsDeterministicAndConsistentWithPredict) {
  auto spec = ToyModelSpec::random(ToyVariant::Attention, {"a", "b", "c"}, 6, 3, 4, 5);
  ToyModel model(spec);
  const auto seq = model.tokenize("s", "a b c a");
  const auto r1 = model.forward_full(seq);
  const auto r2 = model.forward_full(seq);
  EXPECT_TRUE(r1 == r2);
  for (std::size_t l = 1; l <= 4; ++l) {
    const auto p = model.predict_from_layer(l, r1.layer(l));
    for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(p[k], r1.class_scores[k], 1e-12);
  }
  const auto next = model.propagate(2, r1.layer(2));
  for (std::size_t i = 0; i < next.size(); ++i) EXPECT_TRUE(next[i].isApprox(r1.layer(3)[i], 1e-12));
  EXPECT_THROW(model.propagate(4, r1.layer(4)), InvalidInput);
}

TEST(ToyModel, SpecJsonRoundTrip) {
  auto spec = ToyModelSpec::random(ToyVariant::BagOfEmbeddings, {"a", "b"}, 3, 2, 2, 9);
  wftest::TempDir dir;
  save_toy_spec(spec, (dir / "m.json").string());
  const auto back = load_toy_spec((dir / "m.json").string());
  ToyModel a(spec), b(back);
  const auto seq = a.tokenize("s", "a b");
  EXPECT_EQ(a.forward_full(seq).class_scores, b.forward_full(seq).class_scores);
}

TEST(Adapter, ReceptiveFieldPositionsAndConcatenation) {
  class Conv : public ModelAdapter {
   public:
    AdapterInfo info() const override {
      AdapterInfo i;
      i.layer_count = 1;
      i.class_count = 2;
      i.association = AssociationMode::ReceptiveField;
      i.receptive_width = 3;
      return i;
    }
    ActivationRecord forward_full(const TokenSequence&) const override { return {}; }
    std::vector<double> predict_from_layer(std::size_t, std::span<const Vector>) const override {
      return {0.5, 0.5};
    }
  } conv;
  EXPECT_EQ(conv.affected_positions(1, 0, 4), (std::vector<std::size_t>{0, 1}));
  EXPECT_EQ(conv.affected_positions(1, 2, 4), (std::vector<std::size_t>{1, 2, 3}));
  EXPECT_EQ(conv.affected_positions(1, 3, 4), (std::vector<std::size_t>{2, 3}));
  EXPECT_THROW(conv.affected_positions(1, 4, 4), InvalidInput);

  ActivationRecord rec;
  rec.hidden = {{Vector::Constant(1, 1.0), Vector::Constant(1, 2.0), Vector::Constant(1, 3.0)}};
  const Vector v = hidden_for_word(rec, conv, 1, 1);
  EXPECT_EQ(v, Eigen::Vector3d(1, 2, 3));
  LayerStates states = rec.hidden[0];
  const std::vector<std::size_t> pos{0, 1};
  scatter_word_vector(states, pos, Eigen::Vector2d(7, 8));
  EXPECT_EQ(states[0](0), 7);
  EXPECT_EQ(states[1](0), 8);
  EXPECT_EQ(states[2](0), 3);
  EXPECT_EQ(conv.info().association, AssociationMode::ReceptiveField);
  EXPECT_THROW(conv.propagate(1, states), AdapterUnavailable);
}

TEST(ActivationDump, RoundTripPreservesFloat32Values) {
  ToyModel model(ToyModelSpec::random(ToyVariant::Attention, {"a", "b"}, 4, 2, 3, 1));
  std::vector<ActivationRecord> recs{model.forward_full(model.tokenize("one", "a b")),
                                     model.forward_full(model.tokenize("two", "b b a"))};
  const auto bytes = encode_activation_dump(recs);
  const auto back = decode_activation_dump(bytes);
  ASSERT_EQ(back.size(), 2u);
  for (std::size_t r = 0; r < 2; ++r) {
    EXPECT_EQ(back[r].sample_id, recs[r].sample_id);
    EXPECT_EQ(back[r].tokens, recs[r].tokens);
    for (std::size_t l = 0; l < 3; ++l)
      for (std::size_t i = 0; i < recs[r].token_count(); ++i)
        for (Eigen::Index d = 0; d < 4; ++d)
          EXPECT_EQ(back[r].hidden[l][i](d), static_cast<double>(static_cast<float>(recs[r].hidden[l][i](d))));
  }
  // Re-encoding the decoded records is a fixed point.
  EXPECT_EQ(encode_activation_dump(back), bytes);
}

TEST(ActivationDump, CorruptedInputIsRejectedWhole) {
  ToyModel model(ToyModelSpec::random(ToyVariant::Attention, {"a"}, 2, 2, 2, 1));
  std::vector<ActivationRecord> recs{model.forward_full(model.tokenize("one", "a"))};
  auto bytes = encode_activation_dump(recs);
  auto truncated = bytes;
  truncated.resize(bytes.size() - 3);
  EXPECT_THROW(decode_activation_dump(truncated), FormatError);
  auto bad_len = bytes;
  bad_len[12] = 0xFF;  // first metadata length
  bad_len[13] = 0xFF;
  EXPECT_THROW(decode_activation_dump(bad_len), FormatError);
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_activation_dump(bad_magic), FormatError);
}

TEST(DumpAdapter, LooksUpRecordsAndFlagsSurrogatePrediction) {
  ToyModel model(ToyModelSpec::random(ToyVariant::Attention, {"a", "b"}, 4, 2, 2, 3));
  std::vector<ActivationRecord> recs;
  for (int i = 0; i < 6; ++i)
    recs.push_back(model.forward_full(model.tokenize("r" + std::to_string(i), i % 2 ? "a b" : "b a a")));
  DumpAdapter dump(recs);
  const auto info = dump.info();
  EXPECT_FALSE(info.exact_prediction);
  EXPECT_FALSE(info.supports_propagation);
  const auto rec = dump.forward_full(dump.tokenize("r1", ""));
  EXPECT_EQ(rec.sample_id, "r1");
  const auto p = dump.predict_from_layer(2, rec.layer(2));
  EXPECT_NEAR(p[0] + p[1], 1.0, 1e-12);
  EXPECT_ANY_THROW(dump.forward_full(TokenSequence{"missing", {"a"}, {false}}));
}

TEST(Rpc, LoopbackMatchesInProcessModel) {
  ToyModel model(ToyModelSpec::random(ToyVariant::Attention, {"a", "b", "c"}, 4, 2, 3, 21));
  rpc::Server server(model);
  auto remote = rpc::RpcAdapter::connect(server.endpoint());
  EXPECT_EQ(remote->info().layer_count, 3u);
  const auto seq = model.tokenize("s", "a c b");
  const auto local = model.forward_full(seq);
  const auto over = remote->forward_full(seq);
  ASSERT_EQ(over.layer_count(), local.layer_count());
  for (std::size_t l = 0; l < 3; ++l)
    for (std::size_t i = 0; i < seq.size(); ++i)
      EXPECT_TRUE(over.hidden[l][i].isApprox(local.hidden[l][i], 1e-6));
  const auto p = remote->predict_from_layer(2, local.layer(2));
  EXPECT_NEAR(p[0], local.class_scores[0], 1e-6);
  const auto next = remote->propagate(1, local.layer(1));
  EXPECT_TRUE(next[0].isApprox(local.layer(2)[0], 1e-6));
  EXPECT_THROW(remote->predict_from_layer(9, local.layer(2)), InvalidInput);
  server.stop();
}

TEST(Rpc, MalformedRequestGetsProtocolError) {
  ToyModel model(ToyModelSpec::random(ToyVariant::Attention, {"a"}, 2, 2, 2, 1));
  int fds[2];
  ASSERT_EQ(::socketpair(AF_UNIX, SOCK_STREAM, 0, fds), 0);
  rpc::Stream server_side(fds[0], fds[0], true);
  rpc::Stream client_side(fds[1], fds[1], true);
  std::thread worker([&] { rpc::serve_stream(model, server_side); });
  rpc::Frame bad;
  bad.header = {{"op", "no-such-op"}};
  client_side.write_frame(bad);
  const auto reply = client_side.read_frame(std::chrono::milliseconds(5000));
  EXPECT_EQ(reply.header.value("op", ""), "error");
  EXPECT_EQ(reply.header.value("code", ""), "ProtocolError");
  client_side.close();
  worker.join();
}

TEST(Rpc, FrameCodecRejectsGarbage) {
  rpc::Frame f;
  f.header = {{"op", "x"}};
  f.payload = {1.0f, 2.0f};
  auto bytes = rpc::encode_frame(f);
  const std::span<const std::uint8_t> body(bytes.data() + 4, bytes.size() - 4);
  const auto back = rpc::decode_frame(body);
  EXPECT_EQ(back.payload, f.payload);
  std::vector<std::uint8_t> junk(body.begin(), body.end());
  junk.pop_back();
  EXPECT_THROW(rpc::decode_frame(junk), ProtocolError);
  std::vector<std::uint8_t> not_json{2, 0, 0, 0, '{', '!'};
  EXPECT_THROW(rpc::decode_frame(not_json), ProtocolError);
}

TEST(Rpc, UnreachableEndpointIsUnavailable) {
  EXPECT_THROW(rpc::RpcAdapter::connect("127.0.0.1:1"), AdapterUnavailable);
}
