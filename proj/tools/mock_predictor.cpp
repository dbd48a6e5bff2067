// Minimal external predictor speaking the line-delimited JSON protocol.
// Handshake: {"type":"hello","classes":C,"capabilities":["proba"]}
// Request:   {"type":"predict","id":...,"tokens":[...]}
// Response:  {"type":"proba","id":...,"probs":[...]}
//
// By default replies with a deterministic hash-derived simplex. Misbehavior
// flags exist so client-side error handling can be exercised:
//   --probs "0.7,0.3"  fixed response distribution
//   --bad-sum          scale probs so they no longer sum to 1
//   --mismatch-id      answer with a different id than the request
//   --error            answer every request with a protocol error message
//   --tcp PORT         serve one connection on 127.0.0.1:PORT instead of stdio
// Exits 0 when the peer closes the stream.

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

namespace {

std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

struct Options {
  int classes = 2;
  std::vector<double> fixed_probs;
  bool bad_sum = false;
  bool mismatch_id = false;
  bool reply_error = false;
  int tcp_port = -1;
};

std::vector<double> probs_for(const Options& opt,
                              const std::vector<std::string>& tokens) {
  if (!opt.fixed_probs.empty()) return opt.fixed_probs;
  std::string joined;
  for (const auto& t : tokens) {
    joined += t;
    joined += '\x1f';
  }
  const std::uint64_t h = fnv1a64(joined);
  std::vector<double> p(static_cast<std::size_t>(opt.classes));
  double sum = 0.0;
  for (int c = 0; c < opt.classes; ++c) {
    const std::uint64_t bits =
        splitmix64(h ^ static_cast<std::uint64_t>(c + 1));
    p[static_cast<std::size_t>(c)] =
        1e-3 + static_cast<double>(bits >> 11) * 0x1p-53;
    sum += p[static_cast<std::size_t>(c)];
  }
  for (double& v : p) v /= sum;
  return p;
}

// Reads one '\n'-terminated line from fd; nullopt on EOF.
class LineReader {
 public:
  explicit LineReader(int fd) : fd_(fd) {}

  std::optional<std::string> next() {
    for (;;) {
      const auto pos = buffer_.find('\n');
      if (pos != std::string::npos) {
        std::string line = buffer_.substr(0, pos);
        buffer_.erase(0, pos + 1);
        return line;
      }
      char chunk[4096];
      const ssize_t n = ::read(fd_, chunk, sizeof(chunk));
      if (n < 0) {
        if (errno == EINTR) continue;
        return std::nullopt;
      }
      if (n == 0) {
        if (buffer_.empty()) return std::nullopt;
        std::string line = std::move(buffer_);
        buffer_.clear();
        return line;
      }
      buffer_.append(chunk, static_cast<std::size_t>(n));
    }
  }

 private:
  int fd_;
  std::string buffer_;
};

bool write_line(int fd, const std::string& payload) {
  std::string line = payload + "\n";
  std::size_t off = 0;
  while (off < line.size()) {
    const ssize_t n = ::write(fd, line.data() + off, line.size() - off);
    if (n < 0) {
      if (errno == EINTR) continue;
      return false;
    }
    off += static_cast<std::size_t>(n);
  }
  return true;
}

int serve(const Options& opt, int in_fd, int out_fd) {
  nlohmann::ordered_json hello;
  hello["type"] = "hello";
  hello["classes"] = opt.classes;
  hello["capabilities"] = {"proba"};
  if (!write_line(out_fd, hello.dump())) return 0;

  LineReader reader(in_fd);
  while (auto line = reader.next()) {
    if (line->empty()) continue;
    nlohmann::json req;
    try {
      req = nlohmann::json::parse(*line);
    } catch (const nlohmann::json::parse_error&) {
      nlohmann::ordered_json err;
      err["type"] = "error";
      err["id"] = "";
      err["message"] = "unparseable request";
      if (!write_line(out_fd, err.dump())) return 0;
      continue;
    }
    const std::string id = req.value("id", "");
    if (req.value("type", "") != "predict") {
      nlohmann::ordered_json err;
      err["type"] = "error";
      err["id"] = id;
      err["message"] = "unsupported request type";
      if (!write_line(out_fd, err.dump())) return 0;
      continue;
    }
    if (opt.reply_error) {
      nlohmann::ordered_json err;
      err["type"] = "error";
      err["id"] = id;
      err["message"] = "mock failure";
      if (!write_line(out_fd, err.dump())) return 0;
      continue;
    }
    std::vector<std::string> tokens;
    if (req.contains("tokens") && req["tokens"].is_array()) {
      for (const auto& t : req["tokens"]) {
        tokens.push_back(t.get<std::string>());
      }
    }
    auto probs = probs_for(opt, tokens);
    if (opt.bad_sum) {
      for (double& v : probs) v *= 1.5;
    }
    nlohmann::ordered_json resp;
    resp["type"] = "proba";
    resp["id"] = opt.mismatch_id ? id + "-oops" : id;
    resp["probs"] = probs;
    if (!write_line(out_fd, resp.dump())) return 0;
  }
  return 0;
}

int serve_tcp(const Options& opt) {
  const int listener = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listener < 0) {
    std::perror("socket");
    return 2;
  }
  const int one = 1;
  ::setsockopt(listener, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(static_cast<std::uint16_t>(opt.tcp_port));
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  if (::bind(listener, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) < 0) {
    std::perror("bind");
    ::close(listener);
    return 2;
  }
  if (::listen(listener, 1) < 0) {
    std::perror("listen");
    ::close(listener);
    return 2;
  }
  sockaddr_in bound{};
  socklen_t bound_len = sizeof(bound);
  ::getsockname(listener, reinterpret_cast<sockaddr*>(&bound), &bound_len);
  // readiness marker for test harnesses polling stdout ("--tcp 0" binds an
  // ephemeral port, so report the real one)
  std::printf("listening %d\n", static_cast<int>(ntohs(bound.sin_port)));
  std::fflush(stdout);
  const int conn = ::accept(listener, nullptr, nullptr);
  ::close(listener);
  if (conn < 0) {
    std::perror("accept");
    return 2;
  }
  const int rc = serve(opt, conn, conn);
  ::close(conn);
  return rc;
}

}  // namespace

int main(int argc, char** argv) {
  Options opt;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    auto need_value = [&](const char* flag) -> std::string {
      if (i + 1 >= argc) {
        std::fprintf(stderr, "%s requires a value\n", flag);
        std::exit(1);
      }
      return argv[++i];
    };
    if (arg == "--classes") {
      opt.classes = std::stoi(need_value("--classes"));
    } else if (arg == "--probs") {
      const std::string spec = need_value("--probs");
      std::size_t start = 0;
      while (start <= spec.size()) {
        const auto comma = spec.find(',', start);
        const std::string part = spec.substr(
            start, comma == std::string::npos ? std::string::npos
                                              : comma - start);
        if (!part.empty()) opt.fixed_probs.push_back(std::stod(part));
        if (comma == std::string::npos) break;
        start = comma + 1;
      }
      opt.classes = static_cast<int>(opt.fixed_probs.size());
    } else if (arg == "--bad-sum") {
      opt.bad_sum = true;
    } else if (arg == "--mismatch-id") {
      opt.mismatch_id = true;
    } else if (arg == "--error") {
      opt.reply_error = true;
    } else if (arg == "--tcp") {
      opt.tcp_port = std::stoi(need_value("--tcp"));
    } else {
      std::fprintf(stderr, "unknown flag: %s\n", arg.c_str());
      return 1;
    }
  }
  if (opt.classes < 2) {
    std::fprintf(stderr, "--classes must be >= 2\n");
    return 1;
  }
  if (opt.tcp_port >= 0) return serve_tcp(opt);
  return serve(opt, STDIN_FILENO, STDOUT_FILENO);
}
