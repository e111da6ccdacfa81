#pragma once

#include <stdexcept>
#include <string>

namespace fedtad {

// Every failure raised by the harness derives from Error so the runner can
// record the failing stage without knowing the concrete type.
class Error : public std::runtime_error {
public:
    Error(std::string stage, const std::string& what)
        : std::runtime_error(what), stage_(std::move(stage)) {}

    const std::string& stage() const noexcept { return stage_; }

private:
    std::string stage_;
};

struct LoadError : Error {
    explicit LoadError(const std::string& what) : Error("load", what) {}
};

struct FormatError : Error {
    explicit FormatError(const std::string& what) : Error("load", what) {}
};

struct EmptyInputError : Error {
    explicit EmptyInputError(const std::string& what) : Error("window", what) {}
};

struct InfeasiblePartitionError : Error {
    explicit InfeasiblePartitionError(const std::string& what) : Error("partition", what) {}
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& what) : Error("config", what) {}
};

struct ShapeError : Error {
    explicit ShapeError(const std::string& what) : Error("model", what) {}
};

struct DivergenceError : Error {
    DivergenceError(const std::string& what, long batch_index)
        : Error("train", what), batch_index_(batch_index) {}

    long batch_index() const noexcept { return batch_index_; }

private:
    long batch_index_;
};

struct AggregationError : Error {
    explicit AggregationError(const std::string& what) : Error("aggregate", what) {}
};

struct ProtocolError : Error {
    explicit ProtocolError(const std::string& what) : Error("federation", what) {}
};

struct ClientError : Error {
    ClientError(int client_id, const std::string& what)
        : Error("federation", "client " + std::to_string(client_id) + ": " + what),
          client_id_(client_id) {}

    int client_id() const noexcept { return client_id_; }

private:
    int client_id_;
};

struct DegenerateRepresentationError : Error {
    explicit DegenerateRepresentationError(const std::string& what) : Error("train", what) {}
};

struct UndefinedMetricError : Error {
    explicit UndefinedMetricError(const std::string& what) : Error("evaluate", what) {}
};

}  // namespace fedtad
