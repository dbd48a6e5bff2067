#include <cstdio>

#include "catch2/catch_amalgamated.hpp"
#include "helpers.hpp"

using namespace fewlens;
using Kind = ProtocolError::Kind;
using testutil::tiny_vocab;

namespace {

std::string mock_bin() { return MOCK_PREDICTOR_BIN; }

template <typename Fn>
ProtocolError expect_protocol_error(Fn&& fn) {
  try {
    fn();
  } catch (const ProtocolError& e) {
    return e;
  }
  FAIL("expected a ProtocolError");
  return ProtocolError(Kind::kConnect, "unreachable");
}

}  // namespace

TEST_CASE("serve_check validates a healthy endpoint end to end") {
  const auto result = serve_check(mock_bin());
  CHECK(result.classes == 2);
  REQUIRE_FALSE(result.capabilities.empty());
  CHECK(result.capabilities[0] == "proba");
  REQUIRE(result.probe_probs.size() == 2);
  double sum = 0.0;
  for (double p : result.probe_probs) {
    CHECK(p >= 0.0);
    CHECK(p <= 1.0);
    sum += p;
  }
  CHECK_THAT(sum, Catch::Matchers::WithinAbs(1.0, 1e-6));
}

TEST_CASE("external predictor round-trips fixed probabilities") {
  const auto vocab = tiny_vocab({"good", "movie"});
  ExternalPredictor predictor(mock_bin() + " --probs 0.7,0.3", vocab);
  CHECK(predictor.num_classes() == 2);
  CHECK_FALSE(predictor.has_gradient());
  CHECK_FALSE(predictor.has_attention());

  const IdSeq ids = {kClsId, vocab.id_of("good"), kSepId};
  const auto probs = predictor.predict_proba(ids);
  CHECK(probs == std::vector<double>{0.7, 0.3});
  // the channel stays serviceable across requests
  CHECK(predictor.predict_proba(ids) == std::vector<double>{0.7, 0.3});
  CHECK_THROWS_AS(predictor.predict_proba(IdSeq{}), std::invalid_argument);
}

TEST_CASE("hash-mode replies are deterministic across processes") {
  const auto vocab = tiny_vocab({"good", "movie"});
  const IdSeq ids = {kClsId, vocab.id_of("good"), vocab.id_of("movie"), kSepId};
  std::vector<double> first;
  {
    ExternalPredictor predictor(mock_bin(), vocab);
    first = predictor.predict_proba(ids);
  }
  ExternalPredictor again(mock_bin(), vocab);
  CHECK(again.predict_proba(ids) == first);
  // and sensitive to the token content
  CHECK(again.predict_proba(IdSeq{kClsId, vocab.id_of("good"), kSepId}) !=
        first);
}

TEST_CASE("non-simplex responses are rejected") {
  const auto vocab = tiny_vocab({"good"});
  ExternalPredictor predictor(mock_bin() + " --bad-sum", vocab);
  const auto e = expect_protocol_error(
      [&] { predictor.predict_proba(IdSeq{kClsId, kSepId}); });
  CHECK(e.kind() == Kind::kNonSimplex);
}

TEST_CASE("id mismatches are rejected and name both ids") {
  const auto vocab = tiny_vocab({"good"});
  ExternalPredictor predictor(mock_bin() + " --mismatch-id", vocab);
  const auto e = expect_protocol_error(
      [&] { predictor.predict_proba(IdSeq{kClsId, kSepId}); });
  CHECK(e.kind() == Kind::kIdMismatch);
  CHECK_THAT(e.what(), Catch::Matchers::ContainsSubstring(
                           "response id `req-1-oops` does not match request "
                           "id `req-1`"));
}

TEST_CASE("remote errors surface with the server's message") {
  const auto vocab = tiny_vocab({"good"});
  ExternalPredictor predictor(mock_bin() + " --error", vocab);
  const auto e = expect_protocol_error(
      [&] { predictor.predict_proba(IdSeq{kClsId, kSepId}); });
  CHECK(e.kind() == Kind::kRemote);
  CHECK_THAT(e.what(), Catch::Matchers::ContainsSubstring("mock failure"));
}

TEST_CASE("unreachable endpoints fail with connect errors") {
  const auto vocab = tiny_vocab({"good"});

  auto e = expect_protocol_error(
      [&] { ExternalPredictor("/nonexistent-predictor-binary", vocab); });
  CHECK(e.kind() == Kind::kConnect);

  e = expect_protocol_error(
      [&] { ExternalPredictor("tcp:127.0.0.1:1", vocab); });
  CHECK(e.kind() == Kind::kConnect);

  e = expect_protocol_error([&] { serve_check(""); });
  CHECK(e.kind() == Kind::kConnect);

  e = expect_protocol_error([&] { serve_check("tcp:missing-port"); });
  CHECK(e.kind() == Kind::kConnect);
  CHECK_THAT(e.what(),
             Catch::Matchers::ContainsSubstring("tcp:host:port"));
}

TEST_CASE("malformed handshakes are rejected") {
  auto e = expect_protocol_error([&] { serve_check("echo not-json"); });
  CHECK(e.kind() == Kind::kMalformed);
  CHECK_THAT(e.what(),
             Catch::Matchers::ContainsSubstring("handshake is not valid JSON"));

  e = expect_protocol_error(
      [&] { serve_check("echo '{\"type\":\"goodbye\"}'"); });
  CHECK(e.kind() == Kind::kMalformed);
  CHECK_THAT(e.what(), Catch::Matchers::ContainsSubstring("not a hello"));

  e = expect_protocol_error([&] {
    serve_check(
        "echo '{\"type\":\"hello\",\"classes\":1,\"capabilities\":[\"proba\"]}'");
  });
  CHECK(e.kind() == Kind::kMalformed);
  CHECK_THAT(e.what(),
             Catch::Matchers::ContainsSubstring("fewer than 2 classes"));

  e = expect_protocol_error([&] {
    serve_check("echo '{\"type\":\"hello\",\"classes\":2,\"capabilities\":[]}'");
  });
  CHECK(e.kind() == Kind::kMalformed);
  CHECK_THAT(e.what(), Catch::Matchers::ContainsSubstring("proba capability"));
}

TEST_CASE("predict requests use the documented wire format") {
  CHECK(detail::make_predict_request("req-9", {"the", "movie"}) ==
        R"({"type":"predict","id":"req-9","tokens":["the","movie"]})");
}

TEST_CASE("response parsing enforces every protocol rule") {
  auto parse = [](const std::string& line) {
    return detail::parse_proba_response(line, "x", 2);
  };

  CHECK(parse(R"({"type":"proba","id":"x","probs":[0.25,0.75]})") ==
        std::vector<double>{0.25, 0.75});

  // tolerance 1e-6 on the simplex; tiny negatives clamp to zero afterwards
  const auto clamped =
      parse(R"({"type":"proba","id":"x","probs":[-1e-7,1.0000001]})");
  CHECK(clamped[0] == 0.0);

  auto e = expect_protocol_error([&] { parse("garbage"); });
  CHECK(e.kind() == Kind::kMalformed);

  e = expect_protocol_error(
      [&] { parse(R"({"type":"proba","id":"x","probs":[0.5]})"); });
  CHECK(e.kind() == Kind::kMalformed);

  e = expect_protocol_error(
      [&] { parse(R"({"type":"proba","id":"x","probs":[0.5,"half"]})"); });
  CHECK(e.kind() == Kind::kMalformed);

  e = expect_protocol_error(
      [&] { parse(R"({"type":"pong","id":"x","probs":[0.5,0.5]})"); });
  CHECK(e.kind() == Kind::kMalformed);

  e = expect_protocol_error(
      [&] { parse(R"({"type":"proba","id":"x","probs":[0.6,0.6]})"); });
  CHECK(e.kind() == Kind::kNonSimplex);
  CHECK_THAT(e.what(), Catch::Matchers::ContainsSubstring("sum"));

  e = expect_protocol_error(
      [&] { parse(R"({"type":"proba","id":"x","probs":[-0.2,1.2]})"); });
  CHECK(e.kind() == Kind::kNonSimplex);

  e = expect_protocol_error(
      [&] { parse(R"({"type":"proba","id":"y","probs":[0.5,0.5]})"); });
  CHECK(e.kind() == Kind::kIdMismatch);

  e = expect_protocol_error(
      [&] { parse(R"({"type":"error","id":"x","message":"boom"})"); });
  CHECK(e.kind() == Kind::kRemote);
  CHECK_THAT(e.what(), Catch::Matchers::ContainsSubstring("boom"));
}

TEST_CASE("tcp transport serves the same protocol") {
  const std::string cmd = mock_bin() + " --tcp 0 --probs 0.25,0.75";
  FILE* proc = popen(cmd.c_str(), "r");
  REQUIRE(proc != nullptr);
  char line[128] = {0};
  REQUIRE(std::fgets(line, sizeof(line), proc) != nullptr);
  int port = 0;
  REQUIRE(std::sscanf(line, "listening %d", &port) == 1);
  REQUIRE(port > 0);

  const auto vocab = tiny_vocab({"good"});
  {
    ExternalPredictor predictor(
        "tcp:127.0.0.1:" + std::to_string(port), vocab);
    CHECK(predictor.num_classes() == 2);
    CHECK(predictor.predict_proba(IdSeq{kClsId, vocab.id_of("good"), kSepId}) ==
          std::vector<double>{0.25, 0.75});
  }  // closing the socket lets the server exit
  CHECK(pclose(proc) == 0);
}
