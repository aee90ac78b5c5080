#pragma once

#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <stdexcept>
#include <random>
#include <string>
#include <vector>

#include "edi/interchange.hpp"
#include "edi/translator.hpp"

namespace testutil {

class TempDir {
 public:
  TempDir() {
    std::string tmpl = (std::filesystem::temp_directory_path() / "edi-test-XXXXXX").string();
    std::vector<char> buf(tmpl.begin(), tmpl.end());
    buf.push_back('\0');
    if (!mkdtemp(buf.data())) throw std::runtime_error("mkdtemp failed");
    path_ = buf.data();
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline std::string random_digits(std::mt19937& rng, std::size_t n) {
  std::uniform_int_distribution<int> d(0, 9);
  std::string out;
  for (std::size_t i = 0; i < n; ++i) out += static_cast<char>('0' + d(rng));
  return out;
}

// Printable ASCII minus the three delimiters.
inline std::string random_element(std::mt19937& rng, std::size_t max_len = 12) {
  static const std::string charset =
      "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789 .,-_/+()";
  std::uniform_int_distribution<std::size_t> len(0, max_len);
  std::uniform_int_distribution<std::size_t> pick(0, charset.size() - 1);
  std::string out;
  std::size_t n = len(rng);
  for (std::size_t i = 0; i < n; ++i) out += charset[pick(rng)];
  return out;
}

inline std::string random_id(std::mt19937& rng) {
  static const std::string charset = "ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";
  std::uniform_int_distribution<std::size_t> len(1, 8);
  std::uniform_int_distribution<std::size_t> pick(0, charset.size() - 1);
  std::string out;
  std::size_t n = len(rng);
  for (std::size_t i = 0; i < n; ++i) out += charset[pick(rng)];
  return out;
}

inline std::string random_tag(std::mt19937& rng) {
  static const std::string first = "ABCDEFGHIJKLMNOPQRSTUVWXYZ";
  static const std::string rest = "ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";
  while (true) {
    std::uniform_int_distribution<std::size_t> len(2, 3);
    std::uniform_int_distribution<std::size_t> p1(0, first.size() - 1);
    std::uniform_int_distribution<std::size_t> p2(0, rest.size() - 1);
    std::string tag(1, first[p1(rng)]);
    std::size_t n = len(rng);
    while (tag.size() < n) tag += rest[p2(rng)];
    if (tag != "ISA" && tag != "IEA" && tag != "GS" && tag != "GE" && tag != "ST" &&
        tag != "SE")
      return tag;
  }
}

inline edi::interchange::Interchange random_interchange(std::mt19937& rng) {
  using namespace edi::interchange;
  std::uniform_int_distribution<int> small(0, 3);
  std::uniform_int_distribution<int> coin(0, 1);

  Interchange doc;
  doc.sender_id = random_id(rng);
  doc.receiver_id = random_id(rng);
  doc.date = random_digits(rng, 8);
  doc.time = random_digits(rng, 4);
  doc.control_number = random_digits(rng, 9);
  doc.ack_requested = coin(rng) == 1;

  int groups = small(rng);
  for (int g = 0; g < groups; ++g) {
    FunctionalGroup group;
    group.doc_type = random_tag(rng);
    group.group_control = random_digits(rng, 4);
    int txns = small(rng);
    for (int t = 0; t < txns; ++t) {
      TransactionSet txn;
      txn.txn_type = group.doc_type;
      txn.txn_control = random_digits(rng, 4);
      int body = small(rng);
      for (int s = 0; s < body; ++s) {
        Segment seg;
        seg.tag = random_tag(rng);
        int elems = small(rng);
        for (int e = 0; e < elems; ++e) seg.elements.push_back(random_element(rng));
        txn.body.push_back(std::move(seg));
      }
      group.transactions.push_back(std::move(txn));
    }
    doc.groups.push_back(std::move(group));
  }
  return doc;
}

inline edi::translator::InternalDocument random_po(std::mt19937& rng) {
  edi::translator::InternalDocument doc;
  doc.doc_type = "PO";
  doc.header["poNumber"] = random_element(rng);
  doc.header["poDate"] = random_digits(rng, 8);
  std::uniform_int_distribution<int> items(0, 5);
  int n = items(rng);
  for (int i = 0; i < n; ++i) {
    std::map<std::string, std::string> item;
    item["sku"] = random_element(rng);
    item["qty"] = random_digits(rng, 3);
    item["unitPrice"] = random_digits(rng, 2) + "." + random_digits(rng, 2);
    doc.items.push_back(std::move(item));
  }
  return doc;
}

struct RunResult {
  int exit_code = -1;
  std::string output;  // stdout + stderr interleaved
};

// Runs argv[0] with the given arguments and environment additions, capturing
// combined output. envs entries are "KEY=VALUE".
inline RunResult run_process(const std::vector<std::string>& argv,
                             const std::vector<std::string>& envs = {}) {
  int fds[2];
  if (pipe(fds) != 0) throw std::runtime_error("pipe failed");
  pid_t pid = fork();
  if (pid < 0) throw std::runtime_error("fork failed");
  if (pid == 0) {
    dup2(fds[1], 1);
    dup2(fds[1], 2);
    close(fds[0]);
    close(fds[1]);
    for (const std::string& e : envs) putenv(strdup(e.c_str()));
    std::vector<char*> args;
    for (const std::string& a : argv) args.push_back(const_cast<char*>(a.c_str()));
    args.push_back(nullptr);
    execv(args[0], args.data());
    _exit(127);
  }
  close(fds[1]);
  RunResult result;
  char buf[4096];
  ssize_t n;
  while ((n = read(fds[0], buf, sizeof buf)) > 0) result.output.append(buf, static_cast<std::size_t>(n));
  close(fds[0]);
  int status = 0;
  waitpid(pid, &status, 0);
  result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -WTERMSIG(status);
  return result;
}

// A detached child for crash-injection tests.
class ChildProcess {
 public:
  ChildProcess(const std::vector<std::string>& argv, const std::vector<std::string>& envs = {}) {
    pid_ = fork();
    if (pid_ < 0) throw std::runtime_error("fork failed");
    if (pid_ == 0) {
      // Quiet child; diagnostics go to /dev/null.
      FILE* sink = fopen("/dev/null", "w");
      if (sink) {
        dup2(fileno(sink), 1);
        dup2(fileno(sink), 2);
      }
      for (const std::string& e : envs) putenv(strdup(e.c_str()));
      std::vector<char*> args;
      for (const std::string& a : argv) args.push_back(const_cast<char*>(a.c_str()));
      args.push_back(nullptr);
      execv(args[0], args.data());
      _exit(127);
    }
  }
  ~ChildProcess() {
    if (pid_ > 0) {
      ::kill(pid_, SIGKILL);
      int status;
      waitpid(pid_, &status, 0);
    }
  }

  void kill9() {
    if (pid_ > 0) {
      ::kill(pid_, SIGKILL);
      int status;
      waitpid(pid_, &status, 0);
      pid_ = -1;
    }
  }

  void terminate() {
    if (pid_ > 0) {
      ::kill(pid_, SIGTERM);
      int status;
      waitpid(pid_, &status, 0);
      pid_ = -1;
    }
  }

 private:
  pid_t pid_ = -1;
};

}  // namespace testutil
