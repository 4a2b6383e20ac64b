"""
Configuration handling for the chained BFT attack analyzer.
"""
import os
import sys
import logging
import configparser
from pathlib import Path
from dotenv import load_dotenv

load_dotenv()
# Output directory override
OUTPUT_DIR_ENV = "CBFT_OUTPUT_DIR"


class Config:
    """Configuration manager for solver, simulation and output settings."""

    def __init__(self, config_file='config.ini'):
        """
        Initialize configuration from config file.
        """
        self.config = configparser.ConfigParser()

        # Set default values
        self._set_defaults()

        # Try to read from config file
        config_path = Path(config_file)
        if config_path.exists():
            self.config.read(config_path)
        else:
            print(f"Warning: Config file {config_file} not found. Using defaults.", file=sys.stderr)

        output_dir = os.getenv(OUTPUT_DIR_ENV)
        if output_dir:
            self.config['PATHS']['output_dir'] = output_dir

    def _set_defaults(self):
        """Set default configuration values."""
        self.config['LOGGING'] = {
            'level': 'INFO',
            'file': 'logs/cbft.log'
        }

        self.config['PATHS'] = {
            'output_dir': 'results'
        }

        self.config['SOLVER'] = {
            'tol': '1e-4',
            'value_tol': '1e-9',
            'max_iter': '100000',
            'gamma': '0.5',
            'l_max': '20'
        }

        self.config['SIMULATION'] = {
            'views': '4000',
            'runs': '6',
            'seed': '42',
            'error_bound': '0.06'
        }

        self.config['RUNTIME'] = {
            'threads': '1'
        }

    def override(self, section, key, value):
        """Apply a command-line value; None leaves the configured one."""
        if value is not None:
            self.config[section][key] = str(value)

    def setup_logging(self, level=None):
        """Configure logging based on settings."""
        log_config = self.config['LOGGING']
        log_level = getattr(logging, (level or log_config.get('level', 'INFO')).upper(), logging.INFO)
        log_file = log_config.get('file', 'logs/cbft.log')

        # Create directory for log file if it doesn't exist
        log_dir = os.path.dirname(log_file)
        if log_dir and not os.path.exists(log_dir):
            os.makedirs(log_dir)

        # Configure logging
        logging.basicConfig(
            level=log_level,
            format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
            handlers=[
                logging.FileHandler(log_file),
                logging.StreamHandler()
            ]
        )

    def get_solver_settings(self):
        """
        Get solver tolerances and model parameters.
        """
        solver = self.config['SOLVER']
        return {
            'tol': solver.getfloat('tol'),
            'value_tol': solver.getfloat('value_tol'),
            'max_iter': solver.getint('max_iter'),
            'gamma': solver.getfloat('gamma'),
            'l_max': solver.getint('l_max')
        }

    def get_simulation_settings(self):
        """
        Get simulation run sizes, seed and error bound.
        """
        simulation = self.config['SIMULATION']
        return {
            'views': simulation.getint('views'),
            'runs': simulation.getint('runs'),
            'seed': simulation.getint('seed'),
            'error_bound': simulation.getfloat('error_bound')
        }

    def get_threads(self):
        return max(1, self.config['RUNTIME'].getint('threads', 1))

    def get_output_path(self, filename=None):
        """
        Get output directory or file path. Absolute file names are returned as given.
        """
        if filename and os.path.isabs(filename):
            parent = os.path.dirname(filename)
            if parent and not os.path.exists(parent):
                os.makedirs(parent)
            return filename

        output_dir = self.config['PATHS'].get('output_dir', 'results')

        # Create directory if it doesn't exist
        if not os.path.exists(output_dir):
            os.makedirs(output_dir)

        if filename:
            path = os.path.join(output_dir, filename)
            parent = os.path.dirname(path)
            if parent and not os.path.exists(parent):
                os.makedirs(parent)
            return path
        return output_dir
