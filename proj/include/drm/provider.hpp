// SPDX-License-Identifier: Apache-2.0
//
// Text embedding providers for prompt heads. The wire format is one JSON
// object per request, {"texts": [...], "dim": N}, answered by
// {"embeddings": [[...], ...]}; over a child process's stdin/stdout it is
// newline-delimited, over HTTP it is the body of POST /embed.
#pragma once

#include <cerrno>
#include <csignal>
#include <cstdint>
#include <cstring>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include <fcntl.h>
#include <poll.h>
#include <sys/wait.h>
#include <unistd.h>

#include "httplib.h"
#include "json.hpp"

#include "drm/core.hpp"
#include "drm/errors.hpp"
#include "drm/manifest.hpp"
#include "drm/matrix.hpp"

namespace drm::provider {

using json = nlohmann::json;

inline json make_request(const std::vector<std::string>& texts, std::size_t dim) {
  return {{"texts", texts}, {"dim", dim}};
}

/// Checks shape and norms of a response body and converts it to a matrix.
inline Matrix parse_response(const json& body, std::size_t n, std::size_t dim) {
  if (!body.is_object() || !body.contains("embeddings") || !body.at("embeddings").is_array()) {
    throw ProtocolError("provider: response lacks an 'embeddings' array");
  }
  const json& e = body.at("embeddings");
  if (e.size() != n) {
    throw ProtocolError("provider: expected " + std::to_string(n) + " embeddings, got " + std::to_string(e.size()));
  }
  Matrix m(n, dim);
  for (std::size_t i = 0; i < n; ++i) {
    if (!e[i].is_array() || e[i].size() != dim) {
      throw ProtocolError("provider: embedding " + std::to_string(i) + " has wrong dimension (expected " +
                          std::to_string(dim) + ")");
    }
    for (std::size_t k = 0; k < dim; ++k) {
      if (!e[i][k].is_number()) throw ProtocolError("provider: non-numeric embedding entry");
      m(i, k) = e[i][k].get<double>();
    }
    if (std::abs(l2_norm(m.row(i)) - 1.0) > kUnitNormTolerance) {
      throw ProtocolError("provider: embedding " + std::to_string(i) + " is not unit norm");
    }
  }
  return m;
}

class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual Matrix embed(const std::vector<std::string>& texts, std::size_t dim) = 0;
};

/// Deterministic stand-in: a Gaussian vector seeded by FNV-1a of the text.
class MockProvider : public EmbeddingProvider {
 public:
  explicit MockProvider(std::uint64_t seed = 0) : seed_(seed) {}

  Matrix embed(const std::vector<std::string>& texts, std::size_t dim) override {
    if (dim == 0) throw ProtocolError("provider: dim must be >= 1");
    Matrix m(texts.size(), dim);
    for (std::size_t i = 0; i < texts.size(); ++i) {
      std::mt19937_64 rng(fnv1a64(texts[i], 0xcbf29ce484222325ULL ^ seed_));
      std::normal_distribution<double> n01(0.0, 1.0);
      for (double& v : m.row(i)) v = n01(rng);
      l2_normalize_inplace(m.row(i));
    }
    return m;
  }

 private:
  std::uint64_t seed_;
};

/// Long-lived child process speaking newline-delimited JSON on its standard
/// streams. A failed exchange restarts the child; after `max_attempts`
/// failures the error is reported with the attempt count.
class SubprocessProvider : public EmbeddingProvider {
 public:
  explicit SubprocessProvider(std::string command, int max_attempts = 3, int timeout_ms = 10000)
      : command_(std::move(command)), max_attempts_(max_attempts), timeout_ms_(timeout_ms) {}
  ~SubprocessProvider() override { stop(); }
  SubprocessProvider(const SubprocessProvider&) = delete;
  SubprocessProvider& operator=(const SubprocessProvider&) = delete;

  Matrix embed(const std::vector<std::string>& texts, std::size_t dim) override {
    const std::string line = make_request(texts, dim).dump() + "\n";
    std::string last;
    for (int attempt = 1; attempt <= max_attempts_; ++attempt) {
      try {
        if (pid_ <= 0) start();
        write_all(line);
        const std::string reply = read_line();
        json body;
        try {
          body = json::parse(reply);
        } catch (const json::parse_error& e) {
          throw ProtocolError(std::string("provider: malformed response: ") + e.what());
        }
        return parse_response(body, texts.size(), dim);
      } catch (const ProtocolError&) {
        throw;
      } catch (const std::exception& e) {
        last = e.what();
        stop();
      }
    }
    throw ProviderError("subprocess provider failed: " + last, max_attempts_);
  }

 private:
  void start() {
    int in_pipe[2];
    int out_pipe[2];
    if (pipe(in_pipe) != 0 || pipe(out_pipe) != 0) throw std::runtime_error("pipe failed");
    const pid_t pid = fork();
    if (pid < 0) throw std::runtime_error("fork failed");
    if (pid == 0) {
      dup2(in_pipe[0], STDIN_FILENO);
      dup2(out_pipe[1], STDOUT_FILENO);
      close(in_pipe[0]);
      close(in_pipe[1]);
      close(out_pipe[0]);
      close(out_pipe[1]);
      execl("/bin/sh", "sh", "-c", command_.c_str(), static_cast<char*>(nullptr));
      _exit(127);
    }
    close(in_pipe[0]);
    close(out_pipe[1]);
    pid_ = pid;
    to_child_ = in_pipe[1];
    from_child_ = out_pipe[0];
    buffer_.clear();
  }

  void stop() {
    if (to_child_ >= 0) close(to_child_);
    if (from_child_ >= 0) close(from_child_);
    to_child_ = from_child_ = -1;
    if (pid_ > 0) {
      kill(pid_, SIGTERM);
      waitpid(pid_, nullptr, 0);
    }
    pid_ = -1;
  }

  void write_all(const std::string& s) {
    // A dead child would raise SIGPIPE; ignore it and rely on EPIPE.
    std::signal(SIGPIPE, SIG_IGN);
    std::size_t off = 0;
    while (off < s.size()) {
      const ssize_t w = ::write(to_child_, s.data() + off, s.size() - off);
      if (w < 0) {
        if (errno == EINTR) continue;
        throw std::runtime_error(std::string("write to provider failed: ") + std::strerror(errno));
      }
      off += static_cast<std::size_t>(w);
    }
  }

  std::string read_line() {
    for (;;) {
      const auto nl = buffer_.find('\n');
      if (nl != std::string::npos) {
        std::string line = buffer_.substr(0, nl);
        buffer_.erase(0, nl + 1);
        return line;
      }
      pollfd pfd{from_child_, POLLIN, 0};
      const int ready = poll(&pfd, 1, timeout_ms_);
      if (ready == 0) throw std::runtime_error("provider timed out");
      if (ready < 0) {
        if (errno == EINTR) continue;
        throw std::runtime_error("poll failed");
      }
      char chunk[4096];
      const ssize_t r = ::read(from_child_, chunk, sizeof chunk);
      if (r < 0 && errno == EINTR) continue;
      if (r <= 0) throw std::runtime_error("provider closed its output");
      buffer_.append(chunk, static_cast<std::size_t>(r));
    }
  }

  std::string command_;
  int max_attempts_;
  int timeout_ms_;
  pid_t pid_ = -1;
  int to_child_ = -1;
  int from_child_ = -1;
  std::string buffer_;
};

class HttpProvider : public EmbeddingProvider {
 public:
  explicit HttpProvider(std::string base_url, int max_attempts = 3, int timeout_s = 10)
      : base_url_(std::move(base_url)), max_attempts_(max_attempts), timeout_s_(timeout_s) {}

  Matrix embed(const std::vector<std::string>& texts, std::size_t dim) override {
    httplib::Client cli(base_url_);
    cli.set_connection_timeout(timeout_s_, 0);
    cli.set_read_timeout(timeout_s_, 0);
    const std::string body = make_request(texts, dim).dump();
    std::string last;
    for (int attempt = 1; attempt <= max_attempts_; ++attempt) {
      auto res = cli.Post("/embed", body, "application/json");
      if (!res) {
        last = httplib::to_string(res.error());
        continue;
      }
      if (res->status >= 500) {
        last = "HTTP " + std::to_string(res->status);
        continue;
      }
      if (res->status != 200) throw ProtocolError("provider: HTTP " + std::to_string(res->status));
      json parsed;
      try {
        parsed = json::parse(res->body);
      } catch (const json::parse_error& e) {
        throw ProtocolError(std::string("provider: malformed response: ") + e.what());
      }
      return parse_response(parsed, texts.size(), dim);
    }
    throw ProviderError("http provider failed: " + last, max_attempts_);
  }

 private:
  std::string base_url_;
  int max_attempts_;
  int timeout_s_;
};

/// "mock", "mock:SEED", "subprocess:CMD" or "http:URL" (a bare http:// URL also works).
inline std::unique_ptr<EmbeddingProvider> make_provider(const std::string& spec) {
  if (spec.empty() || spec == "mock") return std::make_unique<MockProvider>();
  if (spec.rfind("mock:", 0) == 0) {
    try {
      return std::make_unique<MockProvider>(std::stoull(spec.substr(5)));
    } catch (const std::exception&) {
      throw ConfigError("DRM_PROVIDER: bad mock seed in '" + spec + "'");
    }
  }
  if (spec.rfind("subprocess:", 0) == 0) return std::make_unique<SubprocessProvider>(spec.substr(11));
  if (spec.rfind("http://", 0) == 0) return std::make_unique<HttpProvider>(spec);
  if (spec.rfind("http:", 0) == 0) return std::make_unique<HttpProvider>(spec.substr(5));
  throw ConfigError("DRM_PROVIDER: unknown provider '" + spec + "'");
}

}  // namespace drm::provider
