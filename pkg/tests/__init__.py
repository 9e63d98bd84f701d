"""Tests for inode-lab"""
