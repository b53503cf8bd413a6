"""
单元测试包 - 每个 logic 模块一个测试文件
"""
