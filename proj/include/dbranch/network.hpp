#pragma once

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace dbranch {

enum class Activation { Tanh, Relu, Identity };

Activation parse_activation(std::string_view name);
std::string activation_name(Activation a);

/// NN^{sigma,l,m}_{d_in}: an input layer d_in -> m, l-1 residual blocks
/// x + BN(sigma(Ax+b)), and a linear output m -> 1. Batch norm follows the
/// activation of every hidden layer unless sigma is the identity.
struct NetworkArch {
    std::size_t input_dim = 2;
    std::size_t layers = 6;  ///< l
    std::size_t width = 20;  ///< m
    Activation activation = Activation::Tanh;

    bool batch_norm() const { return activation != Activation::Identity; }
    /// (d_in+1)m + (l-1)(m+1)m + (m+1)
    std::size_t dense_parameter_count() const;

    friend bool operator==(const NetworkArch&, const NetworkArch&) = default;
};

struct BatchNormState {
    Eigen::VectorXd gamma, beta, running_mean, running_var;
};

struct DenseLayer {
    Eigen::MatrixXd A;
    Eigen::VectorXd b;
    BatchNormState bn;  ///< empty when the architecture has no batch norm
};

struct NetworkParams {
    NetworkArch arch;
    std::vector<DenseLayer> hidden;  ///< hidden[0] is the input layer
    Eigen::RowVectorXd out_A;
    double out_b = 0.0;

    std::size_t dense_parameter_count() const;
    /// Dense weights and biases plus batch-norm scale and shift.
    std::size_t trainable_count() const;

    /// Trainable parameters in a fixed order (layer by layer: A row-major, b, gamma, beta; then output).
    std::vector<double> flatten() const;
    void unflatten(const std::vector<double>& theta);
};

inline constexpr double kBatchNormEpsilon = 1e-5;

/// Zero parameters and fresh batch-norm state. Asserts the dense count.
NetworkParams zero_network(const NetworkArch& arch);
/// Weights uniform on +-1/sqrt(fan_in), biases zero, BN scale 1 shift 0.
NetworkParams init_network(const NetworkArch& arch, std::uint64_t seed);

enum class Mode { Train, Eval };

/// Network inputs are columns of `inputs` (input_dim x B). Train mode
/// normalizes with batch statistics and updates the running statistics;
/// eval mode uses the running statistics and does not touch params.
Eigen::RowVectorXd forward(NetworkParams& params, const Eigen::MatrixXd& inputs, Mode mode, double momentum = 0.1);
Eigen::RowVectorXd forward_eval(const NetworkParams& params, const Eigen::MatrixXd& inputs);
double forward_eval(const NetworkParams& params, double t, const std::vector<double>& x);

/// Train-mode loss N^{-1} sum (v_i - target_i)^2 and its gradient with
/// respect to flatten() order. Pure: running statistics are not updated.
double loss_and_gradient(const NetworkParams& params, const Eigen::MatrixXd& inputs, const Eigen::RowVectorXd& targets,
                         std::vector<double>* gradient);

struct TrainConfig {
    std::size_t steps = 3000;  ///< P
    double learning_rate = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_epsilon = 1e-8;
    double bn_momentum = 0.1;
    std::size_t batch_size = 0;  ///< 0: full batch
    std::uint64_t seed = 0;
};

/// eta at 0-based step p: divided by 10 at floor(P/3) and again at 2 floor(P/3).
double scheduled_learning_rate(const TrainConfig& cfg, std::size_t step);

struct TrainLogEntry {
    std::size_t step = 0;
    double loss = 0.0;
    double learning_rate = 0.0;
};

struct TrainResult {
    NetworkParams params;
    std::vector<TrainLogEntry> log;
};

class TrainingError : public std::runtime_error {
public:
    TrainingError(const std::string& what, std::vector<TrainLogEntry> log)
        : std::runtime_error(what), log_(std::move(log))
    {
    }
    const std::vector<TrainLogEntry>& log() const { return log_; }

private:
    std::vector<TrainLogEntry> log_;
};

/// Adam on the mean-squared loss, starting from `init`.
TrainResult train(NetworkParams init, const Eigen::MatrixXd& inputs, const Eigen::RowVectorXd& targets,
                  const TrainConfig& cfg);

void write_train_log_csv(const std::vector<TrainLogEntry>& log, std::ostream& os);

/// Max entry-wise relative error of loss_and_gradient against central differences.
double gradient_check(const NetworkParams& params, const Eigen::MatrixXd& inputs, const Eigen::RowVectorXd& targets,
                      double step = 1e-5);

/// Versioned JSON model file.
std::string save_network(const NetworkParams& params, const std::string& provenance_json = "");
NetworkParams load_network(std::string_view text);
/// As above, and throws std::runtime_error unless the header matches `expected`.
NetworkParams load_network(std::string_view text, const NetworkArch& expected);

}  // namespace dbranch
