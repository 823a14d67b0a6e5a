#pragma once

#include <functional>
#include <iostream>
#include <mutex>
#include <string>
#include <vector>

namespace mtr::log {

using Sink = std::function<void(const std::string&)>;

namespace detail {
inline std::mutex& Mutex() {
  static std::mutex m;
  return m;
}
inline Sink& WarningSink() {
  static Sink sink = [](const std::string& msg) {
    std::cerr << "warning: " << msg << '\n';
  };
  return sink;
}
inline Sink& InfoSink() {
  static Sink sink = [](const std::string& msg) { std::cerr << msg << '\n'; };
  return sink;
}
}  // namespace detail

inline void warn(const std::string& msg) {
  std::lock_guard<std::mutex> lock(detail::Mutex());
  if (detail::WarningSink()) detail::WarningSink()(msg);
}

inline void info(const std::string& msg) {
  std::lock_guard<std::mutex> lock(detail::Mutex());
  if (detail::InfoSink()) detail::InfoSink()(msg);
}

// Replaces the warning sink, returning the previous one.
inline Sink set_warning_sink(Sink sink) {
  std::lock_guard<std::mutex> lock(detail::Mutex());
  std::swap(detail::WarningSink(), sink);
  return sink;
}

inline Sink set_info_sink(Sink sink) {
  std::lock_guard<std::mutex> lock(detail::Mutex());
  std::swap(detail::InfoSink(), sink);
  return sink;
}

// Collects warnings for the lifetime of the object.
class ScopedWarningCapture {
 public:
  ScopedWarningCapture()
      : previous_(set_warning_sink(
            [this](const std::string& msg) { messages_.push_back(msg); })) {}
  ~ScopedWarningCapture() { set_warning_sink(std::move(previous_)); }
  ScopedWarningCapture(const ScopedWarningCapture&) = delete;
  ScopedWarningCapture& operator=(const ScopedWarningCapture&) = delete;

  const std::vector<std::string>& messages() const { return messages_; }
  bool contains(const std::string& needle) const {
    for (const auto& m : messages_)
      if (m.find(needle) != std::string::npos) return true;
    return false;
  }

 private:
  std::vector<std::string> messages_;
  Sink previous_;
};

}  // namespace mtr::log
